//! Network projection: every convolution and the dense layer are
//! refactored into projection-in → reduced core → projection-out sublayers
//! whose bases are principal components of calibration activations.
//!
//! For a layer `y = W * x + b` with input basis `U_in` (mean `μ_in`) and
//! output basis `U_out` (mean `μ_out`):
//!
//! * projection-in: `z = U_inᵀ (x − μ_in)`
//! * core: `u = Σ_k U_outᵀ W_k U_in z_k + U_outᵀ (b + Σ_k W_k μ_in − μ_out)`
//! * projection-out: `y' = U_out u + μ_out`
//!
//! With complete bases the composition equals the original layer.

use crate::model::{
    build_projected, Activation, ConvParams, FcParams, LayerSpec, NetworkModel, ProjectedRanks,
};
use crate::spikesort::sort::{orient, sorted_eigen};
use nalgebra::DMatrix;

use super::CompressionError;

/// Eigenvalues at or below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Sites whose activations are analysed, in [`ProjectedRanks`] field order.
pub const SITES: [&str; 6] = [
    "conv1.out",
    "conv2.in",
    "conv2.out",
    "conv3.in",
    "conv3.out",
    "fc.in",
];

/// Principal components of one activation site.
#[derive(Debug, Clone)]
pub struct LayerPca {
    pub site: String,
    pub mean: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the axis of `eigenvalues[j]`.
    pub vectors: DMatrix<f64>,
    pub total_variance: f64,
}

impl LayerPca {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of eigenvalues above [`RANK_TOLERANCE`] times the largest.
    pub fn numerical_rank(&self) -> usize {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.eigenvalues
            .iter()
            .filter(|&&v| v > RANK_TOLERANCE * top)
            .count()
    }

    fn from_samples(site: &str, dim: usize, samples: &mut dyn Iterator<Item = Vec<f64>>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut outer = DMatrix::<f64>::zeros(dim, dim);
        for s in samples {
            n += 1;
            for i in 0..dim {
                sum[i] += s[i];
                if s[i] == 0.0 {
                    continue;
                }
                for j in i..dim {
                    outer[(i, j)] += s[i] * s[j];
                }
            }
        }
        let nf = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / nf).collect();
        let cov = DMatrix::from_fn(dim, dim, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            outer[(a, b)] / nf - mean[a] * mean[b]
        });
        let total_variance = cov.trace();
        let (eigenvalues, mut vectors) = sorted_eigen(cov);
        for mut col in vectors.column_iter_mut() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            orient(&mut v);
            col.iter_mut().zip(v).for_each(|(c, x)| *c = x);
        }
        Self {
            site: site.to_string(),
            mean,
            eigenvalues,
            vectors,
            total_variance,
        }
    }

    /// Top-`q` basis and mean, or the identity basis with zero mean.
    fn basis(&self, q: usize, identity: bool) -> (DMatrix<f64>, Vec<f64>) {
        if identity {
            (
                DMatrix::identity(self.dim(), self.dim()),
                vec![0.0; self.dim()],
            )
        } else {
            (self.vectors.columns(0, q).into_owned(), self.mean.clone())
        }
    }
}

/// Layer indices of an unprojected network (`conv1`, `conv2`, `conv3`,
/// `fc`).
fn plain_indices(model: &NetworkModel) -> Result<[usize; 4], CompressionError> {
    let find = |name: &str| {
        model.layer_index(name).ok_or_else(|| {
            CompressionError::Config(format!("model has no layer {name:?} to project"))
        })
    };
    let idx = [find("conv1")?, find("conv2")?, find("conv3")?, find("fc")?];
    for &i in &idx[..3] {
        if !matches!(model.layers[i].spec, LayerSpec::Conv1D(_)) {
            return Err(CompressionError::Config(format!(
                "{} is not a convolution",
                model.layers[i].name
            )));
        }
    }
    Ok(idx)
}

fn position_samples(a: &Activation) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..a.len).map(move |t| (0..a.channels).map(|c| a.data[c * a.len + t]).collect())
}

/// PCA at each of [`SITES`] over `calibration` inputs. Convolution sites
/// treat every (segment, position) as one sample of a channel vector; the
/// dense site treats each flattened segment as one sample.
pub fn activation_pca(
    model: &NetworkModel,
    calibration: &[Vec<f64>],
) -> Result<Vec<LayerPca>, CompressionError> {
    if calibration.is_empty() {
        return Err(CompressionError::EmptyCalibration);
    }
    let [c1, c2, c3, fc] = plain_indices(model)?;
    let acts: Vec<Vec<Activation>> = calibration
        .iter()
        .map(|x| model.activations_real(x))
        .collect::<Result<_, _>>()?;
    let input_of = |i: usize| i - 1;
    let conv_site = |site: &str, layer: usize| {
        let dim = acts[0][layer].channels;
        let mut it = acts.iter().flat_map(|a| position_samples(&a[layer]));
        LayerPca::from_samples(site, dim, &mut it)
    };
    let dim = acts[0][input_of(fc)].data.len();
    let mut fc_it = acts.iter().map(|a| a[input_of(fc)].data.clone());
    Ok(vec![
        conv_site(SITES[0], c1),
        conv_site(SITES[1], input_of(c2)),
        conv_site(SITES[2], c2),
        conv_site(SITES[3], input_of(c3)),
        conv_site(SITES[4], c3),
        LayerPca::from_samples(SITES[5], dim, &mut fc_it),
    ])
}

fn ranks_array(r: &ProjectedRanks) -> [usize; 6] {
    [
        r.conv1_out,
        r.conv2_in,
        r.conv2_out,
        r.conv3_in,
        r.conv3_out,
        r.fc_in,
    ]
}

fn ranks_from(a: [usize; 6]) -> ProjectedRanks {
    ProjectedRanks {
        conv1_out: a[0],
        conv2_in: a[1],
        conv2_out: a[2],
        conv3_in: a[3],
        conv3_out: a[4],
        fc_in: a[5],
    }
}

/// Learnables of the projected topology, without building it.
pub fn projected_learnables(
    channels: [usize; 3],
    ranks: &ProjectedRanks,
    fc_len: usize,
    classes: usize,
) -> usize {
    let [c1, c2, c3] = channels;
    let [r1, p2, q2, p3, q3, f] = ranks_array(ranks);
    let pw = |i: usize, o: usize| i * o + o;
    let core = |i: usize, o: usize| 3 * i * o + o;
    core(1, r1)
        + pw(r1, c1)
        + pw(c1, p2)
        + core(p2, q2)
        + pw(q2, c2)
        + pw(c2, p3)
        + core(p3, q3)
        + pw(q3, c3)
        + pw(c3 * fc_len, f)
        + pw(f, classes)
}

#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub model: NetworkModel,
    pub ranks: ProjectedRanks,
    /// Sites that fell back to an identity projection.
    pub flags: Vec<String>,
    pub target_learnables: usize,
    pub reached: bool,
}

/// Projects a network, choosing per-site ranks greedily: starting from
/// complete bases, the component whose removal loses the least variance
/// fraction per learnable saved is dropped until the projected model has at
/// most `(1 − target_reduction)` of the source model's learnables. A target
/// of 0 keeps every component, which is an exact refactoring.
pub fn project_network(
    model: &NetworkModel,
    calibration: &[Vec<f64>],
    target_reduction: f64,
) -> Result<ProjectionOutcome, CompressionError> {
    if !(0.0..=0.9).contains(&target_reduction) {
        return Err(CompressionError::Config(format!(
            "target reduction {target_reduction} outside [0, 0.9]"
        )));
    }
    let pcas = activation_pca(model, calibration)?;
    let (channels, fc_len) = channel_layout(model)?;
    let source = model.learnables();
    let budget = ((1.0 - target_reduction) * source as f64).floor() as usize;
    let mut r: [usize; 6] = std::array::from_fn(|i| pcas[i].dim());
    let learn =
        |r: [usize; 6]| projected_learnables(channels, &ranks_from(r), fc_len, model.class_count);
    if target_reduction > 0.0 {
        while learn(r) > budget {
            let mut best: Option<(f64, usize)> = None;
            for s in 0..6 {
                if r[s] <= 1 {
                    continue;
                }
                let mut smaller = r;
                smaller[s] -= 1;
                let saved = (learn(r) - learn(smaller)) as f64;
                let lost = if pcas[s].total_variance > 0.0 {
                    pcas[s].eigenvalues[r[s] - 1].max(0.0) / pcas[s].total_variance
                } else {
                    0.0
                };
                let cost = lost / saved;
                if best.is_none_or(|(c, _)| cost < c) {
                    best = Some((cost, s));
                }
            }
            match best {
                Some((_, s)) => r[s] -= 1,
                None => break,
            }
        }
    }
    let (projected, ranks, flags) = build_from_pca(model, &pcas, ranks_from(r))?;
    let reached = projected.learnables() <= budget || target_reduction == 0.0;
    Ok(ProjectionOutcome {
        model: projected,
        ranks,
        flags,
        target_learnables: budget,
        reached,
    })
}

/// Projects with explicit ranks.
pub fn project_with_ranks(
    model: &NetworkModel,
    calibration: &[Vec<f64>],
    ranks: ProjectedRanks,
) -> Result<ProjectionOutcome, CompressionError> {
    let pcas = activation_pca(model, calibration)?;
    let (projected, ranks, flags) = build_from_pca(model, &pcas, ranks)?;
    Ok(ProjectionOutcome {
        target_learnables: projected.learnables(),
        model: projected,
        ranks,
        flags,
        reached: true,
    })
}

fn channel_layout(model: &NetworkModel) -> Result<([usize; 3], usize), CompressionError> {
    let [c1, c2, c3, fc] = plain_indices(model)?;
    let ch = |i: usize| model.layers[i].spec.conv().map(|c| c.out_ch).unwrap_or(0);
    let channels = [ch(c1), ch(c2), ch(c3)];
    let in_dim = model.layers[fc].spec.fc().map(|p| p.in_dim).unwrap_or(0);
    if channels[2] == 0 || in_dim % channels[2] != 0 {
        return Err(CompressionError::Config(
            "dense input is not channel-major over conv3".into(),
        ));
    }
    Ok((channels, in_dim / channels[2]))
}

fn build_from_pca(
    model: &NetworkModel,
    pcas: &[LayerPca],
    ranks: ProjectedRanks,
) -> Result<(NetworkModel, ProjectedRanks, Vec<String>), CompressionError> {
    let [i1, i2, i3, ifc] = plain_indices(model)?;
    let (channels, _) = channel_layout(model)?;
    let requested = ranks_array(&ranks);
    let mut flags = Vec::new();
    let mut bases = Vec::with_capacity(6);
    let mut effective = [0usize; 6];
    for (s, pca) in pcas.iter().enumerate() {
        let q = requested[s];
        if q == 0 || q > pca.dim() {
            return Err(CompressionError::Config(format!(
                "rank {q} for {} outside 1..={}",
                pca.site,
                pca.dim()
            )));
        }
        let identity = q > pca.numerical_rank();
        if identity {
            flags.push(format!(
                "{}: rank {q} exceeds numerical rank {}; identity projection",
                pca.site,
                pca.numerical_rank()
            ));
        }
        effective[s] = if identity { pca.dim() } else { q };
        bases.push(pca.basis(q, identity));
    }
    let conv = |i: usize| model.layers[i].spec.conv().cloned().expect("checked conv");
    let dense = model.layers[ifc].spec.fc().cloned().expect("checked dense");
    let dropout = model
        .layers
        .iter()
        .find_map(|l| match l.spec {
            LayerSpec::Dropout { rate } => Some(rate),
            _ => None,
        })
        .unwrap_or(0.5);

    let conv1 = conv(i1);
    if conv1.in_ch != 1 {
        return Err(CompressionError::Config(
            "conv1 must have one input channel".into(),
        ));
    }
    let (u1, m1) = &bases[0];
    let c1_core = core_conv(&conv1, None, (u1, m1));
    let c1_out = proj_out(u1, m1);
    let c2 = conv(i2);
    let c3 = conv(i3);
    if c2.padding != 0 || c3.padding != 0 {
        return Err(CompressionError::Config(
            "projected convolutions after conv1 must be unpadded".into(),
        ));
    }
    let c2_in = proj_in(&bases[1].0, &bases[1].1);
    let c2_core = core_conv(
        &c2,
        Some((&bases[1].0, &bases[1].1)),
        (&bases[2].0, &bases[2].1),
    );
    let c2_out = proj_out(&bases[2].0, &bases[2].1);
    let c3_in = proj_in(&bases[3].0, &bases[3].1);
    let c3_core = core_conv(
        &c3,
        Some((&bases[3].0, &bases[3].1)),
        (&bases[4].0, &bases[4].1),
    );
    let c3_out = proj_out(&bases[4].0, &bases[4].1);
    let (uf, mf) = &bases[5];
    let pin = proj_in(uf, mf);
    let fc_in = FcParams {
        in_dim: pin.in_ch,
        out_dim: pin.out_ch,
        weights: pin.weights,
        bias: pin.bias,
    };
    let mut fc_out = FcParams::zeros(uf.ncols(), dense.out_dim);
    for o in 0..dense.out_dim {
        let row = &dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim];
        for r in 0..uf.ncols() {
            fc_out.weights[o * uf.ncols() + r] =
                (0..dense.in_dim).map(|i| row[i] * uf[(i, r)]).sum();
        }
        fc_out.bias[o] = dense.bias[o] + row.iter().zip(mf).map(|(w, m)| w * m).sum::<f64>();
    }

    let eff = ranks_from(effective);
    let mut out = build_projected(model.input_len, model.class_count, channels, eff, dropout);
    let fill = [
        ("conv1.core", LayerSpec::Conv1D(c1_core)),
        ("conv1.proj_out", LayerSpec::PointwiseConv(c1_out)),
        ("conv2.proj_in", LayerSpec::PointwiseConv(c2_in)),
        ("conv2.core", LayerSpec::Conv1D(c2_core)),
        ("conv2.proj_out", LayerSpec::PointwiseConv(c2_out)),
        ("conv3.proj_in", LayerSpec::PointwiseConv(c3_in)),
        ("conv3.core", LayerSpec::Conv1D(c3_core)),
        ("conv3.proj_out", LayerSpec::PointwiseConv(c3_out)),
        ("fc.proj_in", LayerSpec::FullyConnected(fc_in)),
        ("fc.proj_out", LayerSpec::FullyConnected(fc_out)),
    ];
    for (name, spec) in fill {
        let i = out.layer_index(name).expect("projected layer");
        out.layers[i].spec = spec;
    }
    out.check_shapes()?;
    Ok((out, eff, flags))
}

/// Pointwise `z = Uᵀ (x − μ)`.
fn proj_in(u: &DMatrix<f64>, mean: &[f64]) -> ConvParams {
    let (dim, q) = u.shape();
    let mut p = ConvParams::zeros(dim, q, 1, 0);
    for r in 0..q {
        for c in 0..dim {
            let i = p.w_index(r, c, 0);
            p.weights[i] = u[(c, r)];
        }
        p.bias[r] = -(0..dim).map(|c| u[(c, r)] * mean[c]).sum::<f64>();
    }
    p
}

/// Pointwise `y = U u + μ`.
fn proj_out(u: &DMatrix<f64>, mean: &[f64]) -> ConvParams {
    let (dim, q) = u.shape();
    let mut p = ConvParams::zeros(q, dim, 1, 0);
    for o in 0..dim {
        for r in 0..q {
            let i = p.w_index(o, r, 0);
            p.weights[i] = u[(o, r)];
        }
        p.bias[o] = mean[o];
    }
    p
}

/// Reduced core `U_outᵀ W_k U_in` with the bias absorbing both means.
/// Without an input basis the core reads the original input channels.
fn core_conv(
    conv: &ConvParams,
    input: Option<(&DMatrix<f64>, &Vec<f64>)>,
    output: (&DMatrix<f64>, &Vec<f64>),
) -> ConvParams {
    let (u_out, m_out) = output;
    let q_out = u_out.ncols();
    let q_in = input.map(|(u, _)| u.ncols()).unwrap_or(conv.in_ch);
    let k = conv.kernel_len;
    // W_k U_in for every output channel: [o][r][k]
    let mut wu = vec![0.0; conv.out_ch * q_in * k];
    let mut shifted_bias = conv.bias.clone();
    for o in 0..conv.out_ch {
        for t in 0..k {
            for r in 0..q_in {
                wu[(o * q_in + r) * k + t] = match input {
                    Some((u, _)) => (0..conv.in_ch).map(|c| conv.w(o, c, t) * u[(c, r)]).sum(),
                    None => conv.w(o, r, t),
                };
            }
            if let Some((_, mean)) = input {
                shifted_bias[o] += (0..conv.in_ch)
                    .map(|c| conv.w(o, c, t) * mean[c])
                    .sum::<f64>();
            }
        }
    }
    let mut p = ConvParams::zeros(q_in, q_out, k, conv.padding);
    for s in 0..q_out {
        for r in 0..q_in {
            for t in 0..k {
                let i = p.w_index(s, r, t);
                p.weights[i] = (0..conv.out_ch)
                    .map(|o| u_out[(o, s)] * wu[(o * q_in + r) * k + t])
                    .sum();
            }
        }
        p.bias[s] = (0..conv.out_ch)
            .map(|o| u_out[(o, s)] * (shifted_bias[o] - m_out[o]))
            .sum();
    }
    p
}
