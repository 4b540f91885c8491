//! Parameter counts of the nine reference detector configurations next to
//! their reference values in millions.

use crate::backbone::BackboneSpec;
use crate::cores::{CoreKind, CoreSpec};
use crate::error::Result;
use crate::head::HeadSpec;
use crate::model::{Model, ModelSpec};
use serde::Serialize;
use std::io::Write;

/// Largest accepted relative deviation from the reference count.
pub const TABLE1_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, Serialize)]
pub struct Table1Row {
    pub config: String,
    pub reference_m: f64,
    pub total: u64,
    pub trainable: u64,
}

impl Table1Row {
    pub fn total_m(&self) -> f64 {
        self.total as f64 / 1e6
    }

    /// Signed relative deviation of the computed total from the reference.
    pub fn deviation(&self) -> f64 {
        self.total_m() / self.reference_m - 1.0
    }

    pub fn pass(&self) -> bool {
        self.deviation().abs() <= TABLE1_TOLERANCE
    }
}

/// `(row label, model, reference millions)` for every configuration.
pub fn table1_configs() -> Vec<(String, ModelSpec, f64)> {
    let head = HeadSpec::default();
    let r50 = |core: CoreSpec| ModelSpec {
        backbone: BackboneSpec::resnet50(),
        core,
        head: head.clone(),
    };
    let mut rows = vec![
        ("R50+TPN(B=7,L=1)", r50(CoreSpec::tpn(1, 7)), 36.3),
        ("R50+TPN(B=3,L=2)", r50(CoreSpec::tpn(2, 3)), 36.2),
        ("R50+TPN(B=2,L=3)", r50(CoreSpec::tpn(3, 2)), 36.7),
        ("R50+TPN(B=1,L=5)", r50(CoreSpec::tpn(5, 1)), 37.1),
        ("R50+BiFPN(L=7)", r50(CoreSpec::new(CoreKind::Bifpn, 7, 1)), 34.7),
        ("R50+bFPN(B=14)", r50(CoreSpec::new(CoreKind::Bfpn, 1, 14)), 36.1),
        ("R50+hFPN(B=14)", r50(CoreSpec::new(CoreKind::Hfpn, 1, 14)), 36.1),
    ];
    rows.push((
        "R101+FPN(C=4)",
        ModelSpec {
            backbone: BackboneSpec::resnet101(),
            core: CoreSpec::new(CoreKind::Fpn, 1, 1),
            head: head.clone().with_layers(4).with_final_kernel(3),
        },
        55.1,
    ));
    rows.push((
        "R101+TPN(B=2,L=1)",
        ModelSpec {
            backbone: BackboneSpec::resnet101(),
            core: CoreSpec::tpn(1, 2),
            head,
        },
        51.7,
    ));
    rows.into_iter().map(|(l, s, r)| (l.to_string(), s, r)).collect()
}

pub fn reproduce_table1() -> Result<Vec<Table1Row>> {
    table1_configs()
        .into_iter()
        .map(|(config, spec, reference_m)| {
            let model = Model::build(&spec)?;
            Ok(Table1Row {
                config,
                reference_m,
                total: model.registry.total() as u64,
                trainable: model.registry.trainable() as u64,
            })
        })
        .collect()
}

/// `config,reference_m,total,trainable,deviation,pass`.
pub fn write_table1_csv<W: Write>(w: W, rows: &[Table1Row]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["config", "reference_m", "total", "trainable", "deviation", "pass"])?;
    for r in rows {
        wr.write_record([
            r.config.clone(),
            format!("{:.1}", r.reference_m),
            r.total.to_string(),
            r.trainable.to_string(),
            format!("{:+.4}", r.deviation()),
            r.pass().to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_table1_markdown<W: Write>(mut w: W, rows: &[Table1Row]) -> Result<()> {
    writeln!(
        w,
        "| config | reference (M) | computed (M) | trainable (M) | deviation | pass |"
    )?;
    writeln!(w, "|---|---:|---:|---:|---:|:---:|")?;
    for r in rows {
        writeln!(
            w,
            "| {} | {:.1} | {:.3} | {:.3} | {:+.2}% | {} |",
            r.config,
            r.reference_m,
            r.total_m(),
            r.trainable as f64 / 1e6,
            100.0 * r.deviation(),
            if r.pass() { "yes" } else { "no" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_rows_with_exact_totals() {
        let rows = reproduce_table1().unwrap();
        assert_eq!(rows.len(), 9);
        let base = 23_508_032 + 6_227_200 + 1_375_476;
        assert_eq!(rows[0].total, (base + 548_352 + 7 * 707_840) as u64);
        assert_eq!(rows[4].total, (base + 7 * (8 * 70_784 + 19)) as u64);
        assert_eq!(rows[5].total, rows[6].total);
        let mut md = Vec::new();
        write_table1_markdown(&mut md, &rows).unwrap();
        assert_eq!(String::from_utf8(md).unwrap().lines().count(), 11);
    }
}
