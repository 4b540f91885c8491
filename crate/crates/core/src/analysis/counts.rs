use super::flops::total_flops;
use crate::error::Result;
use crate::model::{Model, ModelSpec};
use serde::Serialize;
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModuleCount {
    pub module: String,
    pub count: u64,
}

/// Per-module totals in registration order, frozen parameters included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamTable {
    pub model: String,
    pub rows: Vec<ModuleCount>,
    pub total: u64,
    pub trainable: u64,
}

pub fn count_params(spec: &ModelSpec) -> Result<ParamTable> {
    let model = Model::build(spec)?;
    let reg = &model.registry;
    Ok(ParamTable {
        model: spec.label(),
        rows: reg
            .by_module()
            .into_iter()
            .map(|(module, count)| ModuleCount {
                module,
                count: count as u64,
            })
            .collect(),
        total: reg.total() as u64,
        trainable: reg.trainable() as u64,
    })
}

/// Writes a `module,count` table.
fn write_rows<W: Write>(w: W, rows: impl Iterator<Item = (String, u64)>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["module", "count"])?;
    for (m, c) in rows {
        wr.write_record([m, c.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

impl ParamTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.rows.iter().map(|r| (r.module.clone(), r.count));
        let tail = [
            ("total".to_string(), self.total),
            ("trainable".to_string(), self.trainable),
        ];
        write_rows(w, rows.chain(tail))
    }
}

/// Convolution FLOPs of one `h × w` image, per module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopTable {
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub rows: Vec<ModuleCount>,
    pub total: u64,
}

pub fn count_flops(spec: &ModelSpec, h: usize, w: usize) -> Result<FlopTable> {
    let model = Model::build(spec)?;
    let total = model.flops(h, w)?;
    let mut rec = Vec::new();
    let c = model.backbone.trace(h, w, &mut rec)?;
    let backbone = total_flops(&rec);
    rec.clear();
    let levels = model.stem.trace(c, &mut rec)?;
    let stem = total_flops(&rec);
    rec.clear();
    model.core.trace(&levels, &mut rec)?;
    let core = total_flops(&rec);
    rec.clear();
    model.head.trace(&levels, &mut rec)?;
    let head = total_flops(&rec);
    let rows = [("backbone", backbone), ("stem", stem), ("core", core), ("head", head)]
        .into_iter()
        .map(|(m, count)| ModuleCount {
            module: m.to_string(),
            count,
        })
        .collect();
    Ok(FlopTable {
        model: spec.label(),
        height: h,
        width: w,
        rows,
        total,
    })
}

impl FlopTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.rows.iter().map(|r| (r.module.clone(), r.count));
        write_rows(w, rows.chain([("total".to_string(), self.total)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneSpec;
    use crate::cores::CoreSpec;
    use crate::head::HeadSpec;

    fn r50_tpn() -> ModelSpec {
        ModelSpec {
            backbone: BackboneSpec::resnet50(),
            core: CoreSpec::tpn(1, 7),
            head: HeadSpec::default(),
        }
    }

    #[test]
    fn table_is_additive() {
        let t = count_params(&r50_tpn()).unwrap();
        let modules: Vec<&str> = t.rows.iter().map(|r| r.module.as_str()).collect();
        assert_eq!(modules, ["backbone", "stem", "core", "head"]);
        assert_eq!(t.rows.iter().map(|r| r.count).sum::<u64>(), t.total);
        assert!(t.trainable < t.total);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("module,count\nbackbone,23508032\n"));
        assert!(text.contains(&format!("total,{}\n", t.total)));
    }

    #[test]
    fn flop_rows_sum_to_total() {
        let t = count_flops(&r50_tpn(), 256, 256).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.count).sum::<u64>(), t.total);
        assert!(count_flops(&r50_tpn(), 250, 256).is_err());
    }
}
