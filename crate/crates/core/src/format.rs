//! `network.json` and `poly.json` readers and writers.
//!
//! Numbers are written in shortest round-trip form and read back with
//! exact float parsing, so save followed by load is bitwise lossless.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::layers::{Conv, Dense, ModuleSpec, Pool, Shape};
use crate::network::NetworkSpec;
use crate::taylor::{Mode, MultiIndex, TaylorPolynomial};
use crate::tensor::Matrix;

pub const NETWORK_SCHEMA_VERSION: u64 = 1;
pub const POLY_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    schema_version: u64,
    input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    modules: Vec<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseFile {
    in_features: usize,
    out_features: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvFile {
    in_channels: usize,
    out_channels: usize,
    kernel_size: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
    weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationFile {
    function: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    kernel_size: [usize; 2],
    stride: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyFile {}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnflattenFile {
    shape: Vec<usize>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModuleFile {
    FullyConnected(DenseFile),
    Conv2d(ConvFile),
    Activation(ActivationFile),
    MaxPool(PoolFile),
    AvgPool(PoolFile),
    Flatten(EmptyFile),
    Unflatten(UnflattenFile),
}

const MODULE_KINDS: [&str; 7] = [
    "fully_connected",
    "conv2d",
    "activation",
    "max_pool",
    "avg_pool",
    "flatten",
    "unflatten",
];

fn field<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        Error::Schema {
            path: if inner == "." {
                prefix.to_string()
            } else {
                format!("{prefix}.{inner}")
            },
            message: format!("{} (schema version {NETWORK_SCHEMA_VERSION})", e.inner()),
        }
    })
}

impl ModuleFile {
    fn decode(mut value: Value, index: usize) -> Result<Self> {
        let prefix = format!("modules[{index}]");
        let kind = match value.as_object_mut().map(|o| o.remove("kind")) {
            Some(Some(Value::String(k))) => k,
            _ => {
                return Err(Error::Schema {
                    path: format!("{prefix}.kind"),
                    message: "missing or non-string module kind".into(),
                })
            }
        };
        Ok(match kind.as_str() {
            "fully_connected" => ModuleFile::FullyConnected(field(value, &prefix)?),
            "conv2d" => ModuleFile::Conv2d(field(value, &prefix)?),
            "activation" => ModuleFile::Activation(field(value, &prefix)?),
            "max_pool" => ModuleFile::MaxPool(field(value, &prefix)?),
            "avg_pool" => ModuleFile::AvgPool(field(value, &prefix)?),
            "flatten" => ModuleFile::Flatten(field(value, &prefix)?),
            "unflatten" => ModuleFile::Unflatten(field(value, &prefix)?),
            other => {
                return Err(Error::Schema {
                    path: format!("{prefix}.kind"),
                    message: format!(
                        "unknown module kind `{other}` (schema version {NETWORK_SCHEMA_VERSION} supports {})",
                        MODULE_KINDS.join(", ")
                    ),
                })
            }
        })
    }

    fn from_spec(m: &ModuleSpec) -> Self {
        match m {
            ModuleSpec::FullyConnected(d) => ModuleFile::FullyConnected(DenseFile {
                in_features: d.in_features(),
                out_features: d.out_features(),
                weight: d.weight.data().to_vec(),
                bias: d.bias.clone(),
            }),
            ModuleSpec::Conv2d(c) => ModuleFile::Conv2d(ConvFile {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel_size: [c.kernel.0, c.kernel.1],
                stride: [c.stride.0, c.stride.1],
                padding: [c.padding.0, c.padding.1],
                weight: c.weight.clone(),
                bias: c.bias.clone(),
            }),
            ModuleSpec::Activation(a) => ModuleFile::Activation(ActivationFile {
                function: a.name().to_string(),
            }),
            ModuleSpec::MaxPool(p) => ModuleFile::MaxPool(PoolFile {
                kernel_size: [p.kernel.0, p.kernel.1],
                stride: [p.stride.0, p.stride.1],
            }),
            ModuleSpec::AvgPool(p) => ModuleFile::AvgPool(PoolFile {
                kernel_size: [p.kernel.0, p.kernel.1],
                stride: [p.stride.0, p.stride.1],
            }),
            ModuleSpec::Flatten => ModuleFile::Flatten(EmptyFile {}),
            ModuleSpec::Unflatten(s) => ModuleFile::Unflatten(UnflattenFile { shape: s.dims() }),
        }
    }

    fn into_spec(self) -> Result<ModuleSpec> {
        Ok(match self {
            ModuleFile::FullyConnected(DenseFile {
                in_features,
                out_features,
                weight,
                bias,
            }) => {
                if weight.len() != in_features * out_features {
                    return Err(Error::shape(format!(
                        "weight has {} values, expected {out_features}x{in_features}",
                        weight.len()
                    )));
                }
                ModuleSpec::FullyConnected(Dense::new(
                    Matrix::new(out_features, in_features, weight)?,
                    bias,
                )?)
            }
            ModuleFile::Conv2d(ConvFile {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
                weight,
                bias,
            }) => ModuleSpec::Conv2d(Conv::new(
                in_channels,
                out_channels,
                (kernel_size[0], kernel_size[1]),
                (stride[0], stride[1]),
                (padding[0], padding[1]),
                weight,
                bias,
            )?),
            ModuleFile::Activation(ActivationFile { function }) => {
                ModuleSpec::Activation(function.parse::<Activation>()?)
            }
            ModuleFile::MaxPool(PoolFile {
                kernel_size,
                stride,
            }) => ModuleSpec::MaxPool(Pool::new(
                (kernel_size[0], kernel_size[1]),
                (stride[0], stride[1]),
            )?),
            ModuleFile::AvgPool(PoolFile {
                kernel_size,
                stride,
            }) => ModuleSpec::AvgPool(Pool::new(
                (kernel_size[0], kernel_size[1]),
                (stride[0], stride[1]),
            )?),
            ModuleFile::Flatten(_) => ModuleSpec::Flatten,
            ModuleFile::Unflatten(UnflattenFile { shape }) => {
                ModuleSpec::Unflatten(Shape::from_dims(&shape)?)
            }
        })
    }
}

fn check_version(value: &Value, supported: u64) -> Result<()> {
    match value.get("schema_version") {
        None => Err(Error::Schema {
            path: "schema_version".into(),
            message: "missing mandatory field".into(),
        }),
        Some(v) => match v.as_u64() {
            Some(found) if found == supported => Ok(()),
            Some(found) => Err(Error::SchemaVersion { found, supported }),
            None => Err(Error::Schema {
                path: "schema_version".into(),
                message: format!("expected an unsigned integer, got {v}"),
            }),
        },
    }
}

fn decode<T: DeserializeOwned>(text: &str, supported: u64) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    check_version(&value, supported)?;
    serde_path_to_error::deserialize(value).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: format!("{} (schema version {supported})", e.inner()),
    })
}

pub fn network_from_json(text: &str) -> Result<NetworkSpec> {
    let file: NetworkFile = decode(text, NETWORK_SCHEMA_VERSION)?;
    let input = Shape::from_dims(&file.input_shape).map_err(|e| Error::Schema {
        path: "input_shape".into(),
        message: e.to_string(),
    })?;
    let modules = file
        .modules
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            ModuleFile::decode(m, i)?
                .into_spec()
                .map_err(|e| Error::module(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkSpec::new(input, modules)?.with_metadata(file.metadata))
}

pub fn network_to_json(net: &NetworkSpec) -> String {
    let file = NetworkFile {
        schema_version: NETWORK_SCHEMA_VERSION,
        input_shape: net.input_shape().dims(),
        metadata: net.metadata().clone(),
        modules: net
            .modules()
            .iter()
            .map(|m| serde_json::to_value(ModuleFile::from_spec(m)).expect("module serializes"))
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("network serializes")
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    network_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_network(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, network_to_json(net).as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyFile {
    schema_version: u64,
    x0: Vec<f64>,
    f0: f64,
    order: usize,
    mode: String,
    terms: Vec<TermFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermFile {
    index: Vec<(usize, u32)>,
    coef: f64,
}

pub fn polynomial_from_json(text: &str) -> Result<TaylorPolynomial> {
    let file: PolyFile = decode(text, POLY_SCHEMA_VERSION)?;
    let mode: Mode = file.mode.parse().map_err(|e: Error| Error::Schema {
        path: "mode".into(),
        message: e.to_string(),
    })?;
    let terms = file
        .terms
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let alpha = MultiIndex::new(t.index).map_err(|e| Error::Schema {
                path: format!("terms[{i}].index"),
                message: e.to_string(),
            })?;
            Ok((alpha, t.coef))
        })
        .collect::<Result<Vec<_>>>()?;
    TaylorPolynomial::from_terms(file.x0, file.f0, file.order, mode, terms)
}

pub fn polynomial_to_json(poly: &TaylorPolynomial) -> String {
    let file = PolyFile {
        schema_version: POLY_SCHEMA_VERSION,
        x0: poly.x0().to_vec(),
        f0: poly.f0(),
        order: poly.order(),
        mode: poly.mode().name().to_string(),
        terms: poly
            .terms()
            .map(|(a, c)| TermFile {
                index: a.pairs().to_vec(),
                coef: c,
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("polynomial serializes")
}

pub fn load_polynomial(path: impl AsRef<Path>) -> Result<TaylorPolynomial> {
    polynomial_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_polynomial(poly: &TaylorPolynomial, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, polynomial_to_json(poly).as_bytes())
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
