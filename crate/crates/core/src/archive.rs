//! Model archives: a directory holding `manifest.json` and one
//! little-endian `f32` blob per parameter tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::Method;
use crate::nn::{Conv2d, Dense, Layer, MaxPool, NamedLayer, Net};

pub const FORMAT_VERSION: &str = "forcelr-archive/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        name: String,
        out_channels: usize,
        in_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    },
    Relu {
        name: String,
    },
    MaxPool {
        name: String,
        kernel: usize,
        stride: usize,
    },
    Dense {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    SoftmaxCrossEntropy {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub preset: Option<String>,
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedEntry {
    pub layer: String,
    pub full_rank: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionInfo {
    pub method: Method,
    pub tau: Option<f64>,
    pub layers: Vec<DecomposedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
    #[serde(default)]
    pub decomposition: Option<DecompositionInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub net: Net<f32>,
    pub preset: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub provenance: BTreeMap<String, String>,
    pub decomposition: Option<DecompositionInfo>,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn blob(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn unblob(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

impl ModelArchive {
    pub fn new(net: Net<f32>) -> Self {
        ModelArchive {
            net,
            preset: None,
            seeds: BTreeMap::new(),
            provenance: BTreeMap::new(),
            decomposition: None,
        }
    }

    fn layout(&self) -> (Manifest, Vec<(String, Vec<u8>)>) {
        let mut layers = Vec::new();
        let mut tensors = Vec::new();
        let mut blobs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, values: &[f32]| {
            let file = format!("{name}.f32");
            tensors.push(TensorEntry {
                name,
                file: file.clone(),
                shape,
            });
            blobs.push((file, blob(values)));
        };
        for l in &self.net.layers {
            let name = l.name.clone();
            match &l.layer {
                Layer::Conv2d(c) => {
                    push(
                        format!("{name}.weight"),
                        vec![c.out_channels, c.in_channels / c.groups, c.kernel.0, c.kernel.1],
                        &c.weight,
                    );
                    if let Some(b) = &c.bias {
                        push(format!("{name}.bias"), vec![c.out_channels], b);
                    }
                    layers.push(LayerSpec::Conv2d {
                        name,
                        out_channels: c.out_channels,
                        in_channels: c.in_channels,
                        kernel: [c.kernel.0, c.kernel.1],
                        stride: c.stride,
                        pad: c.pad,
                        groups: c.groups,
                        bias: c.bias.is_some(),
                    });
                }
                Layer::Relu => layers.push(LayerSpec::Relu { name }),
                Layer::MaxPool(p) => layers.push(LayerSpec::MaxPool {
                    name,
                    kernel: p.kernel,
                    stride: p.stride,
                }),
                Layer::Dense(d) => {
                    push(format!("{name}.weight"), vec![d.outputs, d.inputs], &d.weight);
                    push(format!("{name}.bias"), vec![d.outputs], &d.bias);
                    layers.push(LayerSpec::Dense {
                        name,
                        inputs: d.inputs,
                        outputs: d.outputs,
                    });
                }
            }
        }
        layers.push(LayerSpec::SoftmaxCrossEntropy { name: "loss".into() });
        let manifest = Manifest {
            format_version: FORMAT_VERSION.into(),
            architecture: Architecture {
                preset: self.preset.clone(),
                input: self.net.input,
                classes: self.net.classes,
                layers,
            },
            tensors,
            seeds: self.seeds.clone(),
            provenance: self.provenance.clone(),
            decomposition: self.decomposition.clone(),
        };
        (manifest, blobs)
    }

    pub fn manifest(&self) -> Manifest {
        self.layout().0
    }

    /// Writes the archive into a fresh temp directory and renames it into
    /// place, replacing any previous archive at `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (manifest, blobs) = self.layout();
        let name = dir
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", dir.display())))?;
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let mut tmp_name = std::ffi::OsString::from(".");
        tmp_name.push(name);
        tmp_name.push(format!(".tmp{}", std::process::id()));
        let tmp = parent.join(tmp_name);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))? + "\n";
        fs::write(tmp.join(MANIFEST), json).map_err(|e| Error::io(tmp.join(MANIFEST), e))?;
        for (file, bytes) in blobs {
            fs::write(tmp.join(&file), bytes).map_err(|e| Error::io(tmp.join(&file), e))?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {:?} (expected {FORMAT_VERSION:?})",
                manifest.format_version
            )));
        }
        let mut tensors = BTreeMap::new();
        for t in &manifest.tensors {
            let p = dir.join(&t.file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let expect = t.shape.iter().product::<usize>() * 4;
            if bytes.len() != expect {
                return Err(Error::Format(format!(
                    "{}: {} bytes, shape {:?} needs {expect}",
                    t.file,
                    bytes.len(),
                    t.shape
                )));
            }
            tensors.insert(t.name.clone(), (t.shape.clone(), unblob(&bytes)));
        }
        let mut take = |name: String, shape: Vec<usize>| -> Result<Vec<f32>> {
            let (s, v) = tensors
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            if s != shape {
                return Err(Error::Format(format!("tensor {name} has shape {s:?}, layer needs {shape:?}")));
            }
            Ok(v)
        };
        let arch = &manifest.architecture;
        let mut layers = Vec::new();
        for (k, spec) in arch.layers.iter().enumerate() {
            let (name, layer) = match spec {
                LayerSpec::Conv2d {
                    name,
                    out_channels,
                    in_channels,
                    kernel,
                    stride,
                    pad,
                    groups,
                    bias,
                } => {
                    let w = take(
                        format!("{name}.weight"),
                        vec![*out_channels, in_channels / (*groups).max(1), kernel[0], kernel[1]],
                    )?;
                    let b = if *bias {
                        Some(take(format!("{name}.bias"), vec![*out_channels])?)
                    } else {
                        None
                    };
                    let conv = Conv2d::new(w, b, *out_channels, *in_channels, (kernel[0], kernel[1]), *stride, *pad, *groups)
                        .map_err(|e| Error::Format(format!("{name}: {e}")))?;
                    (name, Layer::Conv2d(conv))
                }
                LayerSpec::Relu { name } => (name, Layer::Relu),
                LayerSpec::MaxPool { name, kernel, stride } => (
                    name,
                    Layer::MaxPool(MaxPool {
                        kernel: *kernel,
                        stride: *stride,
                    }),
                ),
                LayerSpec::Dense { name, inputs, outputs } => {
                    let w = take(format!("{name}.weight"), vec![*outputs, *inputs])?;
                    let b = take(format!("{name}.bias"), vec![*outputs])?;
                    (name, Layer::Dense(Dense::new(w, b, *inputs, *outputs)?))
                }
                LayerSpec::SoftmaxCrossEntropy { .. } => {
                    if k + 1 != arch.layers.len() {
                        return Err(Error::Format("softmax_cross_entropy must be the last layer".into()));
                    }
                    continue;
                }
            };
            layers.push(NamedLayer {
                name: name.clone(),
                layer,
            });
        }
        if !matches!(arch.layers.last(), Some(LayerSpec::SoftmaxCrossEntropy { .. })) {
            return Err(Error::Format("architecture must end in softmax_cross_entropy".into()));
        }
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Format(format!("tensor {name} is not used by any layer")));
        }
        let net = Net::new(arch.input, arch.classes, layers).map_err(|e| Error::Format(e.to_string()))?;
        Ok(ModelArchive {
            net,
            preset: arch.preset.clone(),
            seeds: manifest.seeds,
            provenance: manifest.provenance,
            decomposition: manifest.decomposition,
        })
    }
}
