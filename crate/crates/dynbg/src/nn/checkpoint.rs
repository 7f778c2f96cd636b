//! Checkpoint container: a magic string, a JSON header describing the model
//! and its tensor manifest, then one raw little-endian `f32` blob.
//!
//! The format is deliberately simple so a checkpoint can be inspected with
//! `xxd` and parsed from any language. Saving and reloading is bit-exact for
//! `f32` parameters, which is what makes `train` / `infer` reproducible
//! across process boundaries.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ae::{Autoencoder, AE_HIDDEN_UNITS};
use super::unet::{UNet, UNetSpec};
use super::Parameterized;
use crate::error::{Error, Result};

/// File magic; bump the trailing digit on any layout change.
pub const MAGIC: &[u8; 8] = b"DYNBGCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Autoencoder,
    Unet,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Autoencoder => write!(f, "autoencoder"),
            ModelKind::Unet => write!(f, "unet"),
        }
    }
}

/// Architecture hyperparameters, enough to rebuild the module graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchSpec {
    Autoencoder {
        input_dim: usize,
        hidden_units: Vec<usize>,
    },
    Unet {
        in_channels: usize,
        features: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_kind: ModelKind,
    arch: ArchSpec,
    working_size: [usize; 3],
    seed: u64,
    training_fingerprint: String,
    tensors: Vec<TensorMeta>,
}

/// An in-memory checkpoint: metadata plus named parameter tensors.
#[derive(Debug)]
pub struct Checkpoint {
    pub model_kind: ModelKind,
    pub arch: ArchSpec,
    /// Working resolution the model was trained at, `(height, width, channels)`.
    pub working_size: (usize, usize, usize),
    pub seed: u64,
    /// Free-form provenance string (sequence name, frame selection, seed).
    pub training_fingerprint: String,
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Snapshots a model's parameters in visit order.
    pub fn from_model<M: Parameterized<f32>>(
        model: &mut M,
        model_kind: ModelKind,
        arch: ArchSpec,
        working_size: (usize, usize, usize),
        seed: u64,
        training_fingerprint: impl Into<String>,
    ) -> Self {
        let mut tensors = Vec::new();
        model.visit_params(&mut |name, t| {
            tensors.push((
                name.to_string(),
                t.w.shape().to_vec(),
                t.w.iter().copied().collect::<Vec<f32>>(),
            ));
        });
        Checkpoint {
            model_kind,
            arch,
            working_size,
            seed,
            training_fingerprint: training_fingerprint.into(),
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Copies every stored tensor into the matching parameter of `model`,
    /// by name, with shape validation. Every stored tensor must be consumed
    /// and every model parameter must be filled.
    pub fn apply_to<M: Parameterized<f32>>(&self, model: &mut M, path: &Path) -> Result<()> {
        let mut filled = 0usize;
        let mut problem: Option<String> = None;
        model.visit_params(&mut |name, mut t| {
            if problem.is_some() {
                return;
            }
            match self.tensor(name) {
                None => problem = Some(format!("model parameter `{name}` missing from file")),
                Some((shape, data)) => {
                    if shape != t.w.shape() {
                        problem = Some(format!(
                            "tensor `{name}` has shape {shape:?}, model expects {:?}",
                            t.w.shape()
                        ));
                        return;
                    }
                    for (dst, src) in t.w.iter_mut().zip(data) {
                        *dst = *src;
                    }
                    filled += 1;
                }
            }
        });
        if let Some(reason) = problem {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason,
            });
        }
        if filled != self.tensors.len() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!(
                    "file contains {} tensors but the model consumed {filled}",
                    self.tensors.len()
                ),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut metas = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for (name, shape, data) in &self.tensors {
            metas.push(TensorMeta {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len(),
            });
            offset += data.len();
        }
        let header = Header {
            model_kind: self.model_kind,
            arch: self.arch.clone(),
            working_size: [self.working_size.0, self.working_size.1, self.working_size.2],
            seed: self.seed,
            training_fingerprint: self.training_fingerprint.clone(),
            tensors: metas,
        };
        let header_json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("header serialisation failed: {e}"),
        })?;

        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header_json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        file.write_all(&out)
            .map_err(|e| Error::io(path.to_path_buf(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path.to_path_buf(), e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path.to_path_buf(), e))?;
        if bytes.len() < MAGIC.len() + 8 {
            return Err(fail("file too short for magic + header length".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(fail(format!(
                "bad magic {:?}, expected {:?}",
                &bytes[..MAGIC.len().min(bytes.len())],
                MAGIC
            )));
        }
        let mut len8 = [0u8; 8];
        len8.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
        let header_len = u64::from_le_bytes(len8) as usize;
        let header_start = MAGIC.len() + 8;
        let blob_start = header_start + header_len;
        if bytes.len() < blob_start {
            return Err(fail(format!(
                "declared header length {header_len} exceeds file size"
            )));
        }
        let header: Header = serde_json::from_slice(&bytes[header_start..blob_start])
            .map_err(|e| fail(format!("header parse failed: {e}")))?;
        let blob = &bytes[blob_start..];
        if blob.len() % 4 != 0 {
            return Err(fail("parameter blob is not a whole number of f32s".into()));
        }
        let total: usize = blob.len() / 4;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for meta in &header.tensors {
            let elems: usize = meta.shape.iter().product();
            if elems != meta.len {
                return Err(fail(format!(
                    "tensor `{}` declares len {} but shape {:?}",
                    meta.name, meta.len, meta.shape
                )));
            }
            let end = meta.offset.checked_add(meta.len).filter(|&e| e <= total);
            let Some(end) = end else {
                return Err(fail(format!(
                    "tensor `{}` [{}..) overruns blob of {total} f32s",
                    meta.name, meta.offset
                )));
            };
            let data: Vec<f32> = blob[meta.offset * 4..end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((meta.name.clone(), meta.shape.clone(), data));
        }
        Ok(Checkpoint {
            model_kind: header.model_kind,
            arch: header.arch,
            working_size: (
                header.working_size[0],
                header.working_size[1],
                header.working_size[2],
            ),
            seed: header.seed,
            training_fingerprint: header.training_fingerprint,
            tensors,
        })
    }
}

/// Rebuilds an autoencoder from a checkpoint, validating kind and shape.
pub fn autoencoder_from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<Autoencoder<f32>> {
    let ArchSpec::Autoencoder {
        input_dim,
        ref hidden_units,
    } = ckpt.arch
    else {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected an autoencoder, found {}", ckpt.model_kind),
        });
    };
    if hidden_units != &AE_HIDDEN_UNITS {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported hidden layout {hidden_units:?}, this build uses {AE_HIDDEN_UNITS:?}"
            ),
        });
    }
    let mut model = Autoencoder::<f32>::new(input_dim, ckpt.seed)?;
    ckpt.apply_to(&mut model, path)?;
    Ok(model)
}

/// Rebuilds a U-Net from a checkpoint, validating kind and shape.
pub fn unet_from_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<UNet<f32>> {
    let ArchSpec::Unet {
        in_channels,
        ref features,
    } = ckpt.arch
    else {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("expected a U-Net, found {}", ckpt.model_kind),
        });
    };
    let spec = UNetSpec {
        in_channels,
        features: features.clone(),
    };
    let mut model = UNet::<f32>::new(spec, ckpt.seed)?;
    ckpt.apply_to(&mut model, path)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ae_arch(input_dim: usize) -> ArchSpec {
        ArchSpec::Autoencoder {
            input_dim,
            hidden_units: AE_HIDDEN_UNITS.to_vec(),
        }
    }

    #[test]
    fn autoencoder_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        let mut model = Autoencoder::<f32>::new(48, 123).unwrap();
        // Perturb past the init so the blob isn't trivially symmetric.
        let x = Array2::from_shape_fn((2, 48), |(i, j)| (i + j) as f32 / 50.0);
        let y = model.forward(&x, true);
        model.backward(&(y - &x));
        let mut adam = crate::nn::Adam::new(0.01f32);
        adam.step(&mut model);

        let ckpt = Checkpoint::from_model(
            &mut model,
            ModelKind::Autoencoder,
            ae_arch(48),
            (4, 4, 3),
            123,
            "test:48",
        );
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.model_kind, ModelKind::Autoencoder);
        assert_eq!(loaded.working_size, (4, 4, 3));
        assert_eq!(loaded.seed, 123);
        assert_eq!(loaded.training_fingerprint, "test:48");

        let mut reloaded = autoencoder_from_checkpoint(&loaded, &path).unwrap();
        let probe = Array2::from_shape_fn((3, 48), |(i, j)| ((i * 48 + j) % 11) as f32 / 11.0);
        let a = model.forward(&probe, false);
        let b = reloaded.forward(&probe, false);
        assert_eq!(a, b, "reloaded forward pass must be bit-exact");
    }

    #[test]
    fn unet_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("unet.ckpt");
        let spec = UNetSpec::with_features(vec![2, 4, 8]);
        let mut model = UNet::<f32>::new(spec.clone(), 7).unwrap();
        let ckpt = Checkpoint::from_model(
            &mut model,
            ModelKind::Unet,
            ArchSpec::Unet {
                in_channels: spec.in_channels,
                features: spec.features.clone(),
            },
            (8, 8, 3),
            7,
            "test:unet",
        );
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let mut reloaded = unet_from_checkpoint(&loaded, &path).unwrap();

        let x = ndarray::Array4::from_shape_fn((1, 8, 8, 3), |(_, y, xx, c)| {
            ((y * 8 + xx) * 3 + c) as f32 / 200.0
        });
        assert_eq!(model.forward(&x, false), reloaded.forward(&x, false));
        assert_eq!(model.param_count(), loaded.param_count());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        let mut model = Autoencoder::<f32>::new(27, 1).unwrap();
        let ckpt = Checkpoint::from_model(
            &mut model,
            ModelKind::Autoencoder,
            ae_arch(27),
            (3, 3, 3),
            1,
            "t",
        );
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let err = unet_from_checkpoint(&loaded, &path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }), "got {err}");
    }

    #[test]
    fn truncated_and_corrupt_files_fail_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");

        std::fs::write(&path, b"short").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Checkpoint { .. })
        ));

        std::fs::write(&path, b"WRONGMAG\0\0\0\0\0\0\0\0").unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "got {err}");

        // Valid magic, header length pointing past EOF.
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&1_000_000u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn shape_mismatch_on_apply_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        let mut model = Autoencoder::<f32>::new(48, 0).unwrap();
        // Claim a different input_dim than the stored tensors actually have.
        let ckpt = Checkpoint::from_model(
            &mut model,
            ModelKind::Autoencoder,
            ae_arch(75),
            (5, 5, 3),
            0,
            "t",
        );
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let err = autoencoder_from_checkpoint(&loaded, &path).unwrap_err();
        assert!(err.to_string().contains("shape"), "got {err}");
    }
}
