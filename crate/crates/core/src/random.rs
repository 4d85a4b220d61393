//! Seeded random networks with weights drawn from `U(−w0/fan_in, w0/fan_in)`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::layers::{Conv, Pool, Shape};
use crate::network::NetworkSpec;
use crate::tensor::Matrix;

fn draw(rng: &mut ChaCha8Rng, len: usize, w0: f64, fan_in: usize) -> Result<Vec<f64>> {
    if !w0.is_finite() || w0 < 0.0 {
        return Err(Error::Dimension(format!(
            "weight scale {w0} must be finite and >= 0"
        )));
    }
    let bound = w0 / fan_in as f64;
    if bound == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let dist = Uniform::new_inclusive(-bound, bound);
    Ok((0..len).map(|_| dist.sample(rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub w0: f64,
    pub seed: u64,
}

/// Fully connected network `input → hidden… → output` with the activation
/// after every hidden layer. Biases use the same distribution as weights.
pub fn random_mlp(cfg: &MlpConfig) -> Result<NetworkSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut builder = NetworkSpec::builder(Shape::Flat(cfg.input));
    let mut fan_in = cfg.input;
    for (layer, &width) in cfg
        .hidden
        .iter()
        .chain(std::iter::once(&cfg.output))
        .enumerate()
    {
        let w = Matrix::new(
            width,
            fan_in,
            draw(&mut rng, width * fan_in, cfg.w0, fan_in)?,
        )?;
        let b = draw(&mut rng, width, cfg.w0, fan_in)?;
        builder = builder.dense(w, b)?;
        if layer < cfg.hidden.len() {
            builder = builder.activation(cfg.activation);
        }
        fan_in = width;
    }
    builder.build()
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input: Shape,
    pub channels: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub pool: Option<(PoolKind, usize)>,
    pub outputs: usize,
    pub w0: f64,
    pub seed: u64,
}

/// `conv → activation → [pool] → flatten → fully connected`.
pub fn random_cnn(cfg: &CnnConfig) -> Result<NetworkSpec> {
    let Shape::Map { channels: cin, .. } = cfg.input else {
        return Err(Error::shape(
            "a CNN needs a (channels, height, width) input",
        ));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.kernel;
    let fan_in = cin * k * k;
    let conv = Conv::new(
        cin,
        cfg.channels,
        (k, k),
        (1, 1),
        (0, 0),
        draw(&mut rng, cfg.channels * fan_in, cfg.w0, fan_in)?,
        Some(draw(&mut rng, cfg.channels, cfg.w0, fan_in)?),
    )?;
    let mut builder = NetworkSpec::builder(cfg.input)
        .conv(conv)
        .activation(cfg.activation);
    if let Some((kind, size)) = &cfg.pool {
        let pool = Pool::new((*size, *size), (*size, *size))?;
        builder = match kind {
            PoolKind::Max => builder.max_pool(pool),
            PoolKind::Avg => builder.avg_pool(pool),
        };
    }
    let features = builder.clone().flatten().build()?.output_shape().len();
    let w = Matrix::new(
        cfg.outputs,
        features,
        draw(&mut rng, cfg.outputs * features, cfg.w0, features)?,
    )?;
    let b = draw(&mut rng, cfg.outputs, cfg.w0, features)?;
    builder.flatten().dense(w, b)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ModuleSpec;

    fn cfg(seed: u64) -> MlpConfig {
        MlpConfig {
            input: 3,
            hidden: vec![8, 8],
            output: 1,
            activation: Activation::Tanh,
            w0: 1.0,
            seed,
        }
    }

    #[test]
    fn mlp_structure_and_determinism() {
        let net = random_mlp(&cfg(1)).unwrap();
        let kinds: Vec<&str> = net.modules().iter().map(|m| m.kind()).collect();
        assert_eq!(
            kinds,
            [
                "fully_connected",
                "activation",
                "fully_connected",
                "activation",
                "fully_connected"
            ]
        );
        assert_eq!(net, random_mlp(&cfg(1)).unwrap());
        assert_ne!(net, random_mlp(&cfg(2)).unwrap());
    }

    #[test]
    fn weights_respect_scale() {
        let net = random_mlp(&MlpConfig { w0: 0.5, ..cfg(3) }).unwrap();
        for m in net.modules() {
            if let ModuleSpec::FullyConnected(d) = m {
                let bound = 0.5 / d.in_features() as f64;
                assert!(d.weight.data().iter().all(|w| w.abs() <= bound));
            }
        }
        let zero = random_mlp(&MlpConfig { w0: 0.0, ..cfg(3) }).unwrap();
        assert_eq!(zero.forward_scalar(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn cnn_shapes() {
        let net = random_cnn(&CnnConfig {
            input: Shape::Map {
                channels: 1,
                height: 6,
                width: 6,
            },
            channels: 2,
            kernel: 3,
            activation: Activation::Tanh,
            pool: Some((PoolKind::Max, 2)),
            outputs: 3,
            w0: 0.1,
            seed: 4,
        })
        .unwrap();
        assert_eq!(net.output_shape(), Shape::Flat(3));
        assert_eq!(
            net.shapes()[3],
            Shape::Map {
                channels: 2,
                height: 2,
                width: 2
            }
        );
    }
}
