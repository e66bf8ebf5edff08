//! Checkpoint files: `u64` little-endian manifest length, the JSON
//! manifest, then every tensor as an SGT1 record in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiscSpec, SegNetSpec, StyleGenSpec};
use crate::error::{Error, Result};
use crate::sgt::{read_sgt, write_sgt, SgtTensor};
use crate::tensor::{ParamSet, Tensor};

pub const FORMAT: &str = "segan-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    pub spec: serde_json::Value,
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(spec: serde_json::Value, seed: u64, iteration: usize) -> Self {
        Checkpoint {
            manifest: CheckpointManifest {
                format: FORMAT.into(),
                tensors: Vec::new(),
                spec,
                seed,
                iteration,
            },
            tensors: Vec::new(),
        }
    }

    /// Appends every tensor of `params` as `prefix/name`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet<f32>) {
        for (name, t) in params.iter() {
            self.manifest.tensors.push(TensorEntry {
                name: format!("{prefix}/{name}"),
                shape: t.shape().to_vec(),
            });
            self.tensors.push(t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.manifest.tensors.iter().position(|e| e.name == name).map(|i| &self.tensors[i])
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.manifest.tensors.iter().any(|e| e.name.starts_with(&p))
    }

    /// Tensors under `prefix/`, in stored order, as a parameter set.
    pub fn params(&self, prefix: &str) -> Result<ParamSet<f32>> {
        let p = format!("{prefix}/");
        let mut set = ParamSet::new(prefix);
        for (e, t) in self.manifest.tensors.iter().zip(&self.tensors) {
            if let Some(name) = e.name.strip_prefix(&p) {
                set.push(name, t.clone());
            }
        }
        if set.is_empty() {
            return Err(Error::Format(format!("checkpoint has no `{prefix}` tensors")));
        }
        Ok(set)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let json = serde_json::to_vec(&self.manifest)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.tensors {
            write_sgt(w, &SgtTensor::from_f32(t))?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Format("manifest too large".into()))?;
        if len > 1 << 26 {
            return Err(Error::Format(format!("implausible manifest length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let manifest: CheckpointManifest = serde_json::from_slice(&json)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", manifest.format)));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let t = read_sgt(r)?;
            if t.shape != e.shape {
                return Err(Error::Format(format!("`{}`: manifest {:?}, payload {:?}", e.name, e.shape, t.shape)));
            }
            tensors.push(t.to_tensor::<f32>()?);
        }
        Ok(Checkpoint { manifest, tensors })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(&mut BufReader::new(File::open(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BundleSpec {
    segnet: SegNetSpec,
    discriminator: Option<DiscSpec>,
    generator: Option<StyleGenSpec>,
    phi: bool,
    #[serde(default)]
    evaluate: EvalModel,
}

/// Which segmenter a bundle is scored with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalModel {
    #[default]
    Student,
    Teacher,
}

/// Every network of one run. Φ, when present, is frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub segnet: SegNetSpec,
    pub student: ParamSet<f32>,
    pub teacher: ParamSet<f32>,
    pub discriminator: Option<(DiscSpec, ParamSet<f32>)>,
    pub generator: Option<(StyleGenSpec, ParamSet<f32>)>,
    pub phi: Option<ParamSet<f32>>,
    pub evaluate: EvalModel,
}

impl ModelBundle {
    pub fn eval_params(&self) -> &ParamSet<f32> {
        match self.evaluate {
            EvalModel::Student => &self.student,
            EvalModel::Teacher => &self.teacher,
        }
    }

    pub fn to_checkpoint(&self, seed: u64, iteration: usize) -> Result<Checkpoint> {
        let spec = BundleSpec {
            segnet: self.segnet.clone(),
            discriminator: self.discriminator.as_ref().map(|(s, _)| s.clone()),
            generator: self.generator.as_ref().map(|(s, _)| s.clone()),
            phi: self.phi.is_some(),
            evaluate: self.evaluate,
        };
        let mut c = Checkpoint::new(serde_json::to_value(spec)?, seed, iteration);
        c.push_params("student", &self.student);
        c.push_params("teacher", &self.teacher);
        if let Some((_, p)) = &self.discriminator {
            c.push_params("discriminator", p);
        }
        if let Some((_, p)) = &self.generator {
            c.push_params("generator", p);
        }
        if let Some(p) = &self.phi {
            c.push_params("phi", p);
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let spec: BundleSpec = serde_json::from_value(c.manifest.spec.clone())
            .map_err(|e| Error::Format(format!("checkpoint spec: {e}")))?;
        let expect = spec.segnet.init(0)?;
        let student = c.params("student")?.relabel("student");
        let teacher = c.params("teacher")?.relabel("teacher");
        if !student.congruent(&expect) || !teacher.congruent(&expect) {
            return Err(Error::Format("student/teacher do not match the segmenter spec".into()));
        }
        let discriminator = match spec.discriminator {
            Some(s) => {
                let p = c.params("discriminator")?;
                if !p.congruent(&s.init(0)?) {
                    return Err(Error::Format("discriminator does not match its spec".into()));
                }
                Some((s, p))
            }
            None => None,
        };
        let generator = match spec.generator {
            Some(s) => {
                let p = c.params("generator")?;
                if !p.congruent(&s.init(0)?) {
                    return Err(Error::Format("generator does not match its spec".into()));
                }
                Some((s, p))
            }
            None => None,
        };
        let phi = if spec.phi {
            let mut p = c.params("phi")?;
            p.freeze();
            Some(p)
        } else {
            None
        };
        Ok(ModelBundle {
            segnet: spec.segnet,
            student,
            teacher,
            discriminator,
            generator,
            phi,
            evaluate: spec.evaluate,
        })
    }
}
