//! Fully connected networks with one scalar input and a linear output layer.
//!
//! Parameters live in one flat vector. The layout is layer-major; within a
//! layer the weight matrix (`fan_out x fan_in`, row-major) comes first,
//! followed by the bias vector. Parameter transfer between segments is
//! therefore a plain copy of this vector.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Node, ParamBlock, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sin,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64, dz: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let y = z.tanh();
                (y, (1.0 - y * y) * dz)
            }
            Activation::Sin => (z.sin(), z.cos() * dz),
        }
    }

    fn on_tape(self, tape: &mut Tape, z: Node) -> Node {
        match self {
            Activation::Tanh => tape.tanh(z),
            Activation::Sin => tape.sin(z),
        }
    }
}

/// Layer sizes `1, s_1, ..., s_M, n` plus the hidden activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    sizes: Vec<usize>,
    activation: Activation,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::LayerSpec(format!(
                "need at least one hidden layer, got sizes {sizes:?}"
            )));
        }
        if sizes[0] != 1 {
            return Err(Error::LayerSpec(format!("input size must be 1, got {}", sizes[0])));
        }
        if sizes.contains(&0) {
            return Err(Error::LayerSpec(format!("zero-width layer in {sizes:?}")));
        }
        Ok(Self { sizes, activation })
    }

    /// `1 -> hidden... -> outputs` with tanh hidden units.
    pub fn with_hidden(hidden: &[usize], outputs: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(1);
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        Self::new(sizes, Activation::Tanh)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn widest(&self) -> usize {
        self.sizes.iter().copied().max().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// `(fan_in, fan_out, weight offset, bias offset)` for each layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wo = offset;
            let bo = wo + fan_in * fan_out;
            offset = bo + fan_out;
            (fan_in, fan_out, wo, bo)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    spec: LayerSpec,
    flat: Vec<f64>,
}

impl NetworkParameters {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            flat: vec![0.0; spec.param_count()],
            spec: spec.clone(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier(spec: &LayerSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(spec);
        for (fan_in, fan_out, wo, _) in spec.layers() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.flat[wo..wo + fan_in * fan_out] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        p
    }

    pub fn from_flat(spec: &LayerSpec, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::Shape {
                expected: spec.param_count(),
                actual: flat.len(),
            });
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i });
        }
        Ok(Self {
            spec: spec.clone(),
            flat,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn export_flat(&self) -> Vec<f64> {
        self.flat.clone()
    }

    pub fn import_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat.len() {
            return Err(Error::Shape {
                expected: self.flat.len(),
                actual: flat.len(),
            });
        }
        self.flat.copy_from_slice(flat);
        Ok(())
    }

    /// Row-major `fan_out x fan_in` weights of layer `layer` (0-based).
    pub fn weights(&self, layer: usize) -> &[f64] {
        let (fi, fo, wo, _) = self.spec.layers().nth(layer).expect("layer index");
        &self.flat[wo..wo + fi * fo]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, fo, _, bo) = self.spec.layers().nth(layer).expect("layer index");
        &self.flat[bo..bo + fo]
    }

    /// Raw network output and d/d(input) at network input `t`.
    fn forward(&self, t: f64, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let act = self.spec.activation;
        let layers = self.spec.sizes.len() - 1;
        let mut a = vec![t];
        let mut da = vec![dt];
        for (l, (fan_in, fan_out, wo, bo)) in self.spec.layers().enumerate() {
            let mut z = Vec::with_capacity(fan_out);
            let mut dz = Vec::with_capacity(fan_out);
            for r in 0..fan_out {
                let row = &self.flat[wo + r * fan_in..wo + (r + 1) * fan_in];
                let mut v = self.flat[bo + r];
                let mut d = 0.0;
                for k in 0..fan_in {
                    v += row[k] * a[k];
                    d += row[k] * da[k];
                }
                z.push(v);
                dz.push(d);
            }
            if l + 1 < layers {
                for (v, d) in z.iter_mut().zip(dz.iter_mut()) {
                    (*v, *d) = act.apply(*v, *d);
                }
            }
            a = z;
            da = dz;
        }
        (a, da)
    }

    /// Records the network on `tape` with parameters `block` (which must
    /// follow this network's flat layout) applied to input node `t`.
    pub fn record(&self, tape: &mut Tape, block: ParamBlock, t: Node) -> Vec<Node> {
        assert_eq!(block.len(), self.flat.len(), "parameter block size");
        let act = self.spec.activation;
        let layers = self.spec.sizes.len() - 1;
        let mut inputs = vec![t];
        for (l, (fan_in, fan_out, wo, bo)) in self.spec.layers().enumerate() {
            let first_in = inputs[0];
            let z: Vec<Node> = (0..fan_out)
                .map(|r| {
                    tape.affine(
                        block.node(wo + r * fan_in),
                        first_in,
                        fan_in,
                        Some(block.node(bo + r)),
                    )
                })
                .collect();
            inputs = if l + 1 < layers {
                z.into_iter().map(|zn| act.on_tape(tape, zn)).collect()
            } else {
                z
            };
        }
        inputs
    }
}

/// Affine change of the network input variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InputMap {
    Raw,
    /// `t = (x - center) * inv_half_width`, mapping the segment to [-1, 1].
    Centered { center: f64, inv_half_width: f64 },
}

impl InputMap {
    pub fn for_interval(lo: f64, hi: f64, normalize: bool) -> Self {
        if normalize {
            InputMap::Centered {
                center: 0.5 * (lo + hi),
                inv_half_width: 2.0 / (hi - lo),
            }
        } else {
            InputMap::Raw
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> (f64, f64) {
        match self {
            InputMap::Raw => (x, 1.0),
            InputMap::Centered {
                center,
                inv_half_width,
            } => (inv_half_width * (x - center), inv_half_width),
        }
    }

    pub fn record(self, tape: &mut Tape, x: Node) -> Node {
        match self {
            InputMap::Raw => x,
            InputMap::Centered {
                center,
                inv_half_width,
            } => {
                let c = tape.constant(center);
                let shifted = tape.sub(x, c);
                tape.scale(shifted, inv_half_width)
            }
        }
    }
}

/// A network bound to its sub-interval and the initial value it was trained
/// against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNetwork {
    pub params: NetworkParameters,
    pub interval: (f64, f64),
    pub initial_value: Vec<f64>,
    pub input_map: InputMap,
}

impl SegmentNetwork {
    pub fn new(
        params: NetworkParameters,
        interval: (f64, f64),
        initial_value: Vec<f64>,
        normalize_input: bool,
    ) -> Result<Self> {
        let (lo, hi) = interval;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Interval { lo, hi });
        }
        let n = params.spec().outputs();
        if initial_value.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: initial_value.len(),
            });
        }
        Ok(Self {
            params,
            interval,
            initial_value,
            input_map: InputMap::for_interval(lo, hi, normalize_input),
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        self.params.spec()
    }

    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate_with_derivative(x)?.0)
    }

    pub fn evaluate_with_derivative(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (t, dt) = self.input_map.apply(x);
        let (y, dy) = self.params.forward(t, dt);
        if let Some(i) = y.iter().chain(&dy).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: i });
        }
        Ok((y, dy))
    }

    /// Records `N(x)` on `tape`; returns the output nodes.
    pub fn record(&self, tape: &mut Tape, block: ParamBlock, x: Node) -> Vec<Node> {
        let t = self.input_map.record(tape, x);
        self.params.record(tape, block, t)
    }
}

/// Writes a parameter snapshot: `u64` layer count, the `u64` layer sizes,
/// then the flat parameters as `f64`, all little-endian.
pub fn write_snapshot(path: &Path, params: &NetworkParameters) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * (1 + params.spec.sizes.len() + params.flat.len()));
    buf.extend_from_slice(&(params.spec.sizes.len() as u64).to_le_bytes());
    for &s in &params.spec.sizes {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for &v in &params.flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]. The activation is not
/// stored and must be supplied.
pub fn read_snapshot(path: &Path, activation: Activation) -> Result<NetworkParameters> {
    let bad = |message: String| Error::Snapshot {
        path: path.to_path_buf(),
        message,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 || bytes.len() < 8 {
        return Err(bad(format!("length {} is not a whole number of words", bytes.len())));
    }
    let words: Vec<[u8; 8]> = bytes.chunks_exact(8).map(|c| c.try_into().unwrap()).collect();
    let layers = u64::from_le_bytes(words[0]) as usize;
    if layers + 1 > words.len() {
        return Err(bad(format!("truncated layer signature ({layers} layers)")));
    }
    let sizes: Vec<usize> = words[1..=layers]
        .iter()
        .map(|w| u64::from_le_bytes(*w) as usize)
        .collect();
    let spec = LayerSpec::new(sizes, activation)?;
    let flat: Vec<f64> = words[layers + 1..].iter().map(|w| f64::from_le_bytes(*w)).collect();
    NetworkParameters::from_flat(&spec, flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tanh_111() -> SegmentNetwork {
        let spec = LayerSpec::with_hidden(&[1], 1).unwrap();
        // W1, b1, W2, b2
        let p = NetworkParameters::from_flat(&spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        SegmentNetwork::new(p, (-1.0, 1.0), vec![0.0], false).unwrap()
    }

    fn random_net(seed: u64) -> SegmentNetwork {
        let spec = LayerSpec::with_hidden(&[20, 20], 2).unwrap();
        let mut p = NetworkParameters::xavier(&spec, seed);
        // nonzero biases so they are exercised too
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        let mut flat = p.export_flat();
        for (_, fo, _, bo) in spec.layers() {
            for b in &mut flat[bo..bo + fo] {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        p.import_flat(&flat).unwrap();
        SegmentNetwork::new(p, (0.0, 2.0), vec![0.0, 0.0], false).unwrap()
    }

    /// Straight-line evaluation with explicit nested matrices.
    fn oracle_eval(net: &SegmentNetwork, x: f64) -> Vec<f64> {
        let spec = net.spec();
        let nl = spec.sizes().len() - 1;
        let mut a = vec![x];
        for l in 0..nl {
            let w = net.params.weights(l);
            let b = net.params.bias(l);
            let rows = b.len();
            let cols = a.len();
            let mat: Vec<Vec<f64>> = (0..rows).map(|r| w[r * cols..(r + 1) * cols].to_vec()).collect();
            let z: Vec<f64> = mat
                .iter()
                .zip(b)
                .map(|(row, bi)| row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + bi)
                .collect();
            a = if l + 1 < nl { z.iter().map(|v| v.tanh()).collect() } else { z };
        }
        a
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::new(vec![1, 2], Activation::Tanh).is_err());
        assert!(LayerSpec::new(vec![2, 3, 1], Activation::Tanh).is_err());
        assert!(LayerSpec::new(vec![1, 0, 1], Activation::Tanh).is_err());
        let s = LayerSpec::with_hidden(&[20, 20], 2).unwrap();
        assert_eq!(s.param_count(), 20 + 20 + 400 + 20 + 40 + 2);
    }

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let spec = LayerSpec::with_hidden(&[20], 2).unwrap();
        for seed in 0..20 {
            let p = NetworkParameters::xavier(&spec, seed);
            let bound = 0.5345224838248488;
            assert!(p.weights(0).iter().all(|w| w.abs() <= bound));
            assert!(p.bias(0).iter().chain(p.bias(1)).all(|&b| b == 0.0));
        }
    }

    #[test]
    fn xavier_minimal_fan() {
        let spec = LayerSpec::with_hidden(&[1], 1).unwrap();
        let mut max: f64 = 0.0;
        for seed in 0..500 {
            let p = NetworkParameters::xavier(&spec, seed);
            max = max.max(p.weights(0)[0].abs());
        }
        assert!(max <= 3f64.sqrt());
        // the range is actually used, not a narrower one
        assert!(max > 1.6);
    }

    #[test]
    fn xavier_is_deterministic() {
        let spec = LayerSpec::with_hidden(&[20, 20], 2).unwrap();
        assert_eq!(NetworkParameters::xavier(&spec, 7), NetworkParameters::xavier(&spec, 7));
        assert_ne!(NetworkParameters::xavier(&spec, 7), NetworkParameters::xavier(&spec, 8));
    }

    #[test]
    fn zero_network_is_zero() {
        let spec = LayerSpec::with_hidden(&[20, 20], 3).unwrap();
        let net = SegmentNetwork::new(NetworkParameters::zeros(&spec), (0.0, 1.0), vec![0.0; 3], false).unwrap();
        for x in [-3.0, 0.0, 0.4, 17.0] {
            let (y, dy) = net.evaluate_with_derivative(x).unwrap();
            assert_eq!(y, vec![0.0; 3]);
            assert_eq!(dy, vec![0.0; 3]);
        }
    }

    #[test]
    fn one_one_one_is_tanh() {
        let net = tanh_111();
        assert_eq!(net.evaluate_with_derivative(0.0).unwrap(), (vec![0.0], vec![1.0]));
        assert_eq!(net.evaluate(0.8).unwrap(), vec![0.8f64.tanh()]);
    }

    #[test]
    fn matches_straight_line_oracle() {
        for seed in 0..5 {
            let net = random_net(seed);
            let y = net.evaluate(0.3).unwrap();
            let o = oracle_eval(&net, 0.3);
            for (a, b) in y.iter().zip(&o) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-6;
        for seed in 0..5 {
            let net = random_net(seed);
            for &x in &[-0.7, 0.0, 0.3, 1.1, 2.5] {
                let (_, dy) = net.evaluate_with_derivative(x).unwrap();
                let p = net.evaluate(x + h).unwrap();
                let m = net.evaluate(x - h).unwrap();
                for i in 0..2 {
                    let fd = (p[i] - m[i]) / (2.0 * h);
                    let rel = (dy[i] - fd).abs() / dy[i].abs().max(1e-3);
                    assert!(rel < 1e-6, "seed {seed} x {x}: {} vs {fd}", dy[i]);
                }
            }
        }
    }

    #[test]
    fn normalized_input_chain_rule() {
        let spec = LayerSpec::with_hidden(&[8], 1).unwrap();
        let p = NetworkParameters::xavier(&spec, 3);
        let net = SegmentNetwork::new(p, (10.0, 14.0), vec![0.0], true).unwrap();
        let h = 1e-6;
        let (_, dy) = net.evaluate_with_derivative(11.0).unwrap();
        let fd = (net.evaluate(11.0 + h).unwrap()[0] - net.evaluate(11.0 - h).unwrap()[0]) / (2.0 * h);
        assert!((dy[0] - fd).abs() < 1e-7);
    }

    #[test]
    fn tape_record_matches_direct_bitwise() {
        for normalize in [false, true] {
            let net = {
                let n = random_net(11);
                SegmentNetwork::new(n.params, (0.0, 2.0), vec![0.0, 0.0], normalize).unwrap()
            };
            let mut tape = Tape::new();
            let block = tape.params(net.params.as_flat());
            let x = tape.input(0.0);
            let out = net.record(&mut tape, block, x);
            for &xv in &[0.0, 0.37, 1.9] {
                tape.set_input(x, xv);
                tape.forward().unwrap();
                let (y, dy) = net.evaluate_with_derivative(xv).unwrap();
                for i in 0..2 {
                    assert_eq!(tape.value(out[i]).to_bits(), y[i].to_bits());
                    assert_eq!(tape.tangent(out[i]).unwrap().to_bits(), dy[i].to_bits());
                }
            }
        }
    }

    #[test]
    fn import_wrong_length_is_shape_error() {
        let mut p = NetworkParameters::zeros(&LayerSpec::with_hidden(&[4], 2).unwrap());
        assert!(matches!(p.import_flat(&[0.0; 3]), Err(Error::Shape { expected: 18, actual: 3 })));
        assert!(NetworkParameters::from_flat(p.spec(), vec![0.0; 19]).is_err());
    }

    #[test]
    fn transfer_gives_identical_outputs() {
        let src = random_net(4);
        let mut dst = SegmentNetwork::new(
            NetworkParameters::zeros(src.spec()),
            (2.0, 4.0),
            vec![1.0, 1.0],
            false,
        )
        .unwrap();
        dst.params.import_flat(&src.params.export_flat()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-5.0..5.0);
            assert_eq!(src.evaluate(x).unwrap(), dst.evaluate(x).unwrap());
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.bin");
        let net = random_net(2);
        write_snapshot(&path, &net.params).unwrap();
        let back = read_snapshot(&path, Activation::Tanh).unwrap();
        assert_eq!(back, net.params);
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 8 * (1 + 4 + 502));
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert!(read_snapshot(&path, Activation::Tanh).is_err());
    }

    proptest! {
        #[test]
        fn export_import_round_trip(seed in any::<u64>(), x in -10.0f64..10.0) {
            let spec = LayerSpec::with_hidden(&[5, 3], 2).unwrap();
            let src = NetworkParameters::xavier(&spec, seed);
            let mut dst = NetworkParameters::zeros(&spec);
            dst.import_flat(&src.export_flat()).unwrap();
            prop_assert_eq!(&dst, &src);
            let a = SegmentNetwork::new(src, (0.0, 1.0), vec![0.0; 2], false).unwrap();
            let b = SegmentNetwork::new(dst, (0.0, 1.0), vec![0.0; 2], false).unwrap();
            prop_assert_eq!(a.evaluate(x).unwrap(), b.evaluate(x).unwrap());
        }
    }
}
