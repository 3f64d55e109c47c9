//! Binary model checkpoints.
//!
//! Little-endian layout, documented in `docs/checkpoint-format.md`:
//!
//! ```text
//! magic    b"GEM1"
//! version  u32
//! meta     u32 byte length, then UTF-8 JSON (CheckpointMeta)
//! count    u32 number of tensors
//! tensor*  name (u32 length + UTF-8), dtype u8 (0 = f32, 1 = f64),
//!          ndim u32, dims u64 * ndim, values in dtype,
//!          Adam first and second moments as f64
//! step     u64 Adam step counter
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::model::{GeoGnn, ModelConfig, Precision};
use crate::tensor::Tensor;
use crate::train::TaskType;

pub const MAGIC: &[u8; 4] = b"GEM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub model: ModelConfig,
    pub layout: FeatureLayout,
    pub precision: Precision,
    /// Completed epochs of the stage.
    pub epoch: usize,
    pub seed: u64,
    /// Label names of the downstream head, in output order.
    #[serde(default)]
    pub tasks: Vec<String>,
    #[serde(default)]
    pub task_type: Option<TaskType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: GeoGnn,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize, what: &str) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} too large")))?;
    put_u32(out, v);
    Ok(())
}

pub fn to_bytes(meta: &CheckpointMeta, model: &GeoGnn) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_vec(meta)?;
    put_len(&mut out, json.len(), "metadata")?;
    out.extend_from_slice(&json);
    put_len(&mut out, model.params.len(), "tensor count")?;
    for p in model.params.iter() {
        put_len(&mut out, p.name.len(), "tensor name")?;
        out.extend_from_slice(p.name.as_bytes());
        out.push(match meta.precision {
            Precision::F32 => 0,
            Precision::F64 => 1,
        });
        put_len(&mut out, p.value.shape().len(), "rank")?;
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            match meta.precision {
                Precision::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&x.to_le_bytes()),
            }
        }
        for t in [&p.m, &p.v] {
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&model.params.step.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a GEM1 checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut model = GeoGnn::new(meta.model.clone(), meta.layout.clone(), meta.seed, meta.precision)?;

    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, model configuration expects {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let values = match dtype {
            0 => r.f32s(numel)?,
            1 => r.f64s(numel)?,
            d => return Err(Error::Checkpoint(format!("{name}: unknown dtype {d}"))),
        };
        let m = r.f64s(numel)?;
        let v = r.f64s(numel)?;
        let idx = model
            .params
            .index_of(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
        let p = model.params.get_mut(idx);
        if p.value.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {shape:?}, expected {:?}",
                p.value.shape()
            )));
        }
        p.value = Tensor::new(shape.clone(), values)?;
        p.m = Tensor::new(shape.clone(), m)?;
        p.v = Tensor::new(shape, v)?;
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Checkpoint(format!("missing tensor {:?}", model.params.get(i).name)));
    }
    model.params.step = r.u64()?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if !model.params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(Checkpoint { meta, model })
}

/// Writes to a temporary sibling and renames it into place.
pub fn save(path: &Path, meta: &CheckpointMeta, model: &GeoGnn) -> Result<()> {
    let bytes = to_bytes(meta, model)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

/// Refuses a checkpoint whose feature layout differs from `layout`.
pub fn check_layout(meta: &CheckpointMeta, layout: &FeatureLayout) -> Result<()> {
    let diff = meta.layout.diff(layout);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::LayoutMismatch(diff.join("\n")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    fn meta(precision: Precision) -> CheckpointMeta {
        CheckpointMeta {
            stage: Stage::Init,
            model: ModelConfig {
                blocks: 1,
                hidden: 4,
                geometry_head_hidden: 8,
                downstream_head_hidden: 8,
                fingerprint_bits: 3,
                num_tasks: 2,
                ..ModelConfig::default()
            },
            layout: FeatureConfig::default().layout(),
            precision,
            epoch: 0,
            seed: 5,
            tasks: vec!["a".into(), "b".into()],
            task_type: Some(TaskType::Regression),
        }
    }

    #[test]
    fn roundtrip_f64_is_exact() {
        let m = meta(Precision::F64);
        let mut model = GeoGnn::new(m.model.clone(), m.layout.clone(), 99, Precision::F64).unwrap();
        model.params.step = 17;
        model.params.get_mut(0).m.data_mut()[0] = 0.125;
        let back = from_bytes(&to_bytes(&m, &model).unwrap()).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.meta, m);
    }

    #[test]
    fn roundtrip_f32() {
        let m = meta(Precision::F32);
        let model = GeoGnn::new(m.model.clone(), m.layout.clone(), 1, Precision::F32).unwrap();
        let back = from_bytes(&to_bytes(&m, &model).unwrap()).unwrap();
        assert_eq!(back.model.params, model.params);
    }

    #[test]
    fn corrupt_inputs_are_errors() {
        let m = meta(Precision::F64);
        let model = GeoGnn::new(m.model.clone(), m.layout.clone(), 1, Precision::F64).unwrap();
        let bytes = to_bytes(&m, &model).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(from_bytes(b"GEM2").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn save_load_and_layout_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gem");
        let m = meta(Precision::F64);
        let model = GeoGnn::new(m.model.clone(), m.layout.clone(), 1, Precision::F64).unwrap();
        save(&path, &m, &model).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.model, model);
        check_layout(&ck.meta, &m.layout).unwrap();
        let other = FeatureConfig {
            gamma: 4.0,
            ..FeatureConfig::default()
        };
        assert!(matches!(check_layout(&ck.meta, &other.layout()), Err(Error::LayoutMismatch(_))));
    }
}
