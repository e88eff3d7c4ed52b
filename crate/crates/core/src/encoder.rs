//! Latent points for drugs and diseases.
//!
//! The metric-information path encodes an item's binary association profile
//! with a one-layer sigmoid autoencoder and regularizes it so that similar
//! items (by the supplied similarity matrix) sit close together. The one-hot
//! path is a free table of points looked up by index.

use serde::{Deserialize, Serialize};

use crate::dataset::{AssociationMatrix, SimilarityMatrix};
use crate::numkit::{affine, axpy, sigmoid, sigmoid_vec, DenseMatrix, NumError, ParamTensor, RngStream};
use crate::par::Exec;

/// Autoencoder weights for one side. `w_enc` is `k × n_in`, `v_dec` is `n_in × k`;
/// biases are stored as single-row matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w_enc: ParamTensor,
    pub b_enc: ParamTensor,
    pub v_dec: ParamTensor,
    pub b_dec: ParamTensor,
}

impl EncoderParams {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(n_in: usize, k: usize, rng: &mut RngStream) -> Self {
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
            ParamTensor::new(DenseMatrix::from_vec(rows, cols, data).expect("finite"))
        };
        let w_enc = uniform(k, n_in, n_in);
        let v_dec = uniform(n_in, k, k);
        Self {
            w_enc,
            b_enc: ParamTensor::new(DenseMatrix::zeros(1, k)),
            v_dec,
            b_dec: ParamTensor::new(DenseMatrix::zeros(1, n_in)),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.w_enc.value.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.value.cols()
    }

    pub fn zero_grad(&mut self) {
        for p in self.tensors_mut() {
            p.zero_grad();
        }
    }

    pub fn tensors(&self) -> [&ParamTensor; 4] {
        [&self.w_enc, &self.b_enc, &self.v_dec, &self.b_dec]
    }

    pub fn tensors_mut(&mut self) -> [&mut ParamTensor; 4] {
        [&mut self.w_enc, &mut self.b_enc, &mut self.v_dec, &mut self.b_dec]
    }
}

/// One latent point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub points: DenseMatrix,
}

impl LatentTable {
    /// Entries uniform in `[0, 1)`.
    pub fn init(n_items: usize, k: usize, rng: &mut RngStream) -> Self {
        let data = (0..n_items * k).map(|_| rng.uniform()).collect();
        Self { points: DenseMatrix::from_vec(n_items, k, data).expect("finite") }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }
}

/// Binary profiles of one side of the association matrix, kept both dense and
/// as lists of active inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    dense: DenseMatrix,
    active: Vec<Vec<usize>>,
}

impl Profiles {
    /// Rows of the association matrix (each drug over all diseases).
    pub fn drugs(assoc: &AssociationMatrix) -> Self {
        Self::build(assoc.n_drugs(), assoc.n_diseases(), |i, j| assoc.get(i, j))
    }

    /// Columns of the association matrix (each disease over all drugs).
    pub fn diseases(assoc: &AssociationMatrix) -> Self {
        Self::build(assoc.n_diseases(), assoc.n_drugs(), |j, i| assoc.get(i, j))
    }

    fn build(n: usize, n_in: usize, on: impl Fn(usize, usize) -> bool) -> Self {
        let mut dense = DenseMatrix::zeros(n, n_in);
        let mut active = vec![Vec::new(); n];
        for (i, act) in active.iter_mut().enumerate() {
            for c in 0..n_in {
                if on(i, c) {
                    dense.set(i, c, 1.0);
                    act.push(c);
                }
            }
        }
        Self { dense, active }
    }

    pub fn len(&self) -> usize {
        self.dense.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.dense.cols()
    }

    pub fn profile(&self, i: usize) -> &[f64] {
        self.dense.row(i)
    }

    pub fn active(&self, i: usize) -> &[usize] {
        &self.active[i]
    }
}

/// Top-K most similar other items per item, weight descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub lists: Vec<Vec<(usize, f64)>>,
}

impl NeighborSet {
    /// `k = None` keeps every item with positive similarity. With `normalize`,
    /// each list is rescaled to sum to 1.
    pub fn from_similarity(sim: &SimilarityMatrix, k: Option<usize>, normalize: bool) -> Self {
        let n = sim.len();
        let lists = (0..n)
            .map(|i| {
                let mut cand: Vec<(usize, f64)> =
                    (0..n).filter(|&j| j != i).map(|j| (j, sim.get(i, j))).filter(|&(_, w)| w > 0.0).collect();
                cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                if let Some(k) = k {
                    cand.truncate(k);
                }
                if normalize {
                    let total: f64 = cand.iter().map(|c| c.1).sum();
                    if total > 0.0 {
                        cand.iter_mut().for_each(|c| c.1 /= total);
                    }
                }
                cand
            })
            .collect();
        Self { lists }
    }

    pub fn empty(n: usize) -> Self {
        Self { lists: vec![Vec::new(); n] }
    }

    pub fn of(&self, i: usize) -> &[(usize, f64)] {
        &self.lists[i]
    }
}

/// `sigmoid(W · profile + b)`.
pub fn encode(profile: &[f64], params: &EncoderParams) -> Result<Vec<f64>, NumError> {
    Ok(sigmoid_vec(&affine(&params.w_enc.value, profile, params.b_enc.value.row(0))?))
}

/// `sigmoid(V · point + b)`.
pub fn decode(point: &[f64], params: &EncoderParams) -> Result<Vec<f64>, NumError> {
    Ok(sigmoid_vec(&affine(&params.v_dec.value, point, params.b_dec.value.row(0))?))
}

/// Encodes every profile, using the active-input lists of the binary profiles.
pub fn encode_all(profiles: &Profiles, params: &EncoderParams, exec: Exec) -> LatentTable {
    let k = params.latent_dim();
    let w = &params.w_enc.value;
    let b = params.b_enc.value.row(0);
    let rows = exec.map_range(profiles.len(), |i| {
        let active = profiles.active(i);
        (0..k)
            .map(|t| {
                let row = w.row(t);
                sigmoid(b[t] + active.iter().map(|&c| row[c]).sum::<f64>())
            })
            .collect::<Vec<f64>>()
    });
    LatentTable { points: DenseMatrix::from_vec(profiles.len(), k, rows.concat()).expect("finite") }
}

/// Row `index` of a free latent table.
pub fn lookup_latent(index: usize, table: &LatentTable) -> Result<Vec<f64>, NumError> {
    if index >= table.len() {
        return Err(NumError::Shape(format!("index {index} out of range for {} items", table.len())));
    }
    Ok(table.point(index).to_vec())
}

/// Mean over `items` of `‖decode(d_i) − profile_i‖² + Σ_k w_ik ‖d_i − d_k‖²`.
pub fn side_loss(
    items: &[usize],
    profiles: &Profiles,
    params: &EncoderParams,
    latents: &LatentTable,
    neighbors: &NeighborSet,
) -> Result<f64, NumError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &i in items {
        let recon = decode(latents.point(i), params)?;
        total += recon.iter().zip(profiles.profile(i)).map(|(r, x)| (r - x) * (r - x)).sum::<f64>();
        total += neighbor_term(i, latents, neighbors);
    }
    Ok(total / items.len() as f64)
}

fn neighbor_term(i: usize, latents: &LatentTable, neighbors: &NeighborSet) -> f64 {
    let di = latents.point(i);
    neighbors.of(i).iter().map(|&(k, w)| w * crate::numkit::squared_distance(di, latents.point(k))).sum()
}

/// Reconstruction part of [`side_loss`] scaled by `scale / |items|`: adds decoder
/// gradients into `params` and latent gradients into `latent_grad`.
/// Returns the unscaled mean reconstruction error.
pub fn reconstruction_backward(
    items: &[usize],
    profiles: &Profiles,
    params: &mut EncoderParams,
    latents: &LatentTable,
    scale: f64,
    latent_grad: &mut DenseMatrix,
    exec: Exec,
) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let coef = scale / items.len() as f64;
    let v = &params.v_dec.value;
    let b = params.b_dec.value.row(0);
    // (error, ∂/∂pre-activation) per item; accumulated below in item order.
    let per_item = exec.map_slice(items, |&i| {
        let d = latents.point(i);
        let x = profiles.profile(i);
        let mut err = 0.0;
        let delta: Vec<f64> = (0..v.rows())
            .map(|r| {
                let out = sigmoid(b[r] + crate::numkit::dot(v.row(r), d));
                let e = out - x[r];
                err += e * e;
                2.0 * e * out * (1.0 - out) * coef
            })
            .collect();
        (err, delta)
    });
    let mut total = 0.0;
    for (&i, (err, delta)) in items.iter().zip(&per_item) {
        total += err;
        let d = latents.point(i);
        let gl = params.v_dec.value.matvec_transposed(delta).expect("shape");
        axpy(1.0, &gl, latent_grad.row_mut(i));
        for (r, &g) in delta.iter().enumerate() {
            if g != 0.0 {
                axpy(g, d, params.v_dec.grad.row_mut(r));
            }
        }
        axpy(1.0, delta, params.b_dec.grad.row_mut(0));
    }
    total / items.len() as f64
}

/// Neighbor-pull part of [`side_loss`] scaled by `scale / |items|`: gradients
/// reach both the item and its neighbors. Returns the unscaled mean pull term.
pub fn regularizer_backward(
    items: &[usize],
    latents: &LatentTable,
    neighbors: &NeighborSet,
    scale: f64,
    latent_grad: &mut DenseMatrix,
) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let coef = scale / items.len() as f64;
    let k = latents.latent_dim();
    let mut total = 0.0;
    let mut g = vec![0.0; k];
    for &i in items {
        let di = latents.point(i);
        for &(n, w) in neighbors.of(i) {
            let dn = latents.point(n);
            for t in 0..k {
                let diff = di[t] - dn[t];
                total += w * diff * diff;
                g[t] = 2.0 * w * diff * coef;
            }
            axpy(1.0, &g, latent_grad.row_mut(i));
            axpy(-1.0, &g, latent_grad.row_mut(n));
        }
    }
    total / items.len() as f64
}

/// Pushes latent-point gradients back through `sigmoid(W x + b)` into `params`.
pub fn encoder_backward(
    latent_grad: &DenseMatrix,
    latents: &LatentTable,
    profiles: &Profiles,
    params: &mut EncoderParams,
) {
    let k = latents.latent_dim();
    let mut delta = vec![0.0; k];
    for i in 0..latents.len() {
        let g = latent_grad.row(i);
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let a = latents.point(i);
        for t in 0..k {
            delta[t] = g[t] * a[t] * (1.0 - a[t]);
        }
        axpy(1.0, &delta, params.b_enc.grad.row_mut(0));
        let active = profiles.active(i);
        for (t, &dt) in delta.iter().enumerate() {
            let row = params.w_enc.grad.row_mut(t);
            for &c in active {
                row[c] += dt;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pair;
    use crate::numkit::{finite_diff_check, squared_distance};

    fn params_from(w: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> EncoderParams {
        let w = DenseMatrix::from_rows(&w).unwrap();
        let v = DenseMatrix::from_rows(&v).unwrap();
        let (k, n) = w.shape();
        EncoderParams {
            w_enc: ParamTensor::new(w),
            b_enc: ParamTensor::new(DenseMatrix::zeros(1, k)),
            v_dec: ParamTensor::new(v),
            b_dec: ParamTensor::new(DenseMatrix::zeros(1, n)),
        }
    }

    #[test]
    fn encode_examples() {
        let zero = params_from(vec![vec![0.0; 3]; 2], vec![vec![0.0; 2]; 3]);
        assert_eq!(encode(&[1.0, 0.0, 1.0], &zero).unwrap(), vec![0.5, 0.5]);
        let eye = params_from(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0; 2]; 2]);
        assert_eq!(encode(&[1.0, 0.0], &eye).unwrap(), vec![sigmoid(1.0), 0.5]);
        assert!(encode(&[1.0], &eye).is_err());
    }

    #[test]
    fn decode_examples() {
        let zero = params_from(vec![vec![0.0; 3]; 2], vec![vec![0.0; 2]; 3]);
        assert_eq!(decode(&[0.3, 0.9], &zero).unwrap(), vec![0.5; 3]);
        let x = [1.0, 0.0, 1.0];
        assert_eq!(decode(&encode(&x, &zero).unwrap(), &zero).unwrap().len(), x.len());
        let v = params_from(vec![vec![0.0, 0.0]], vec![vec![2.0], vec![-2.0]]);
        assert_eq!(decode(&[1.0], &v).unwrap(), vec![sigmoid(2.0), sigmoid(-2.0)]);
    }

    #[test]
    fn sparse_encode_matches_dense() {
        let assoc = AssociationMatrix::from_positives(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
            &[Pair::new(0, 1), Pair::new(0, 3), Pair::new(2, 2)],
        )
        .unwrap();
        let profiles = Profiles::drugs(&assoc);
        let mut rng = RngStream::new(4);
        let mut p = EncoderParams::init(4, 3, &mut rng);
        p.b_enc.value.as_mut_slice().copy_from_slice(&[0.1, -0.2, 0.3]);
        let table = encode_all(&profiles, &p, Exec::default());
        for i in 0..3 {
            let dense = encode(&assoc.drug_profile(i), &p).unwrap();
            for (a, b) in dense.iter().zip(table.point(i)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert_eq!(Profiles::diseases(&assoc).profile(1), &[1.0, 0.0, 0.0]);
    }

    fn two_item_setup(w: f64) -> (Profiles, NeighborSet) {
        let assoc =
            AssociationMatrix::from_positives(vec!["a".into(), "b".into()], vec!["x".into(), "y".into()], &[]).unwrap();
        (Profiles::drugs(&assoc), NeighborSet { lists: vec![vec![(1, w)], vec![]] })
    }

    #[test]
    fn side_loss_examples() {
        // decoder saturated to reproduce an all-zero profile
        let mut p = params_from(vec![vec![0.0; 2]; 2], vec![vec![0.0; 2]; 2]);
        p.b_dec.value.as_mut_slice().copy_from_slice(&[-800.0, -800.0]);
        let (profiles, nb) = two_item_setup(0.5);
        let same = LatentTable { points: DenseMatrix::filled(2, 2, 0.3) };
        assert_eq!(side_loss(&[0, 1], &profiles, &p, &same, &nb).unwrap(), 0.0);

        let apart = LatentTable { points: DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap() };
        assert!((side_loss(&[0], &profiles, &p, &apart, &nb).unwrap() - 1.0).abs() < 1e-12);

        let plain = params_from(vec![vec![0.0; 2]; 2], vec![vec![0.0; 2]; 2]);
        let pure = side_loss(&[0], &profiles, &plain, &apart, &NeighborSet::empty(2)).unwrap();
        assert!((pure - 0.5).abs() < 1e-15, "two outputs at 0.5 against zeros");
    }

    #[test]
    fn neighbor_sets_are_top_k() {
        let sim = SimilarityMatrix::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            DenseMatrix::from_rows(&[
                vec![1.0, 0.2, 0.9, 0.0],
                vec![0.2, 1.0, 0.5, 0.5],
                vec![0.9, 0.5, 1.0, 0.1],
                vec![0.0, 0.5, 0.1, 1.0],
            ])
            .unwrap(),
        )
        .unwrap();
        let nb = NeighborSet::from_similarity(&sim, Some(2), false);
        assert_eq!(nb.of(0), &[(2, 0.9), (1, 0.2)]);
        assert_eq!(nb.of(1), &[(2, 0.5), (3, 0.5)]);
        let all = NeighborSet::from_similarity(&sim, None, false);
        assert_eq!(all.of(0).len(), 2, "zero-similarity item dropped");
        let norm = NeighborSet::from_similarity(&sim, None, true);
        assert!((norm.of(2).iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
        for (i, list) in all.lists.iter().enumerate() {
            assert!(list.iter().all(|&(j, w)| j != i && (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn lookup_examples() {
        let mut table = LatentTable::init(5, 3, &mut RngStream::new(1));
        table.points.row_mut(2).copy_from_slice(&[0.1, 0.2, 0.3]);
        assert_eq!(lookup_latent(2, &table).unwrap(), vec![0.1, 0.2, 0.3]);
        assert_eq!(lookup_latent(4, &table).unwrap(), lookup_latent(4, &table).unwrap());
        assert!(lookup_latent(5, &table).is_err());
    }

    #[test]
    fn one_hot_step_touches_only_the_used_row() {
        let mut table = ParamTensor::new(LatentTable::init(6, 4, &mut RngStream::new(2)).points);
        let target = [0.9, 0.1, 0.4, 0.7];
        let loss = |t: &ParamTensor| squared_distance(t.value.row(3), &target);
        for (c, x) in target.iter().enumerate() {
            table.grad.set(3, c, 2.0 * (table.value.get(3, c) - x));
        }
        let mut ps = vec![table.clone()];
        let err = finite_diff_check(|p| loss(&p[0]), &mut ps, 1e-6, 40, &mut RngStream::new(3)).unwrap();
        assert!(err < 1e-7);
        let before = table.value.clone();
        table.adam_step(&Default::default()).unwrap();
        for r in 0..6 {
            assert_eq!(table.value.row(r) == before.row(r), r != 3);
        }
    }

    fn random_side(seed: u64, n: usize, n_in: usize, k: usize) -> (Profiles, EncoderParams, NeighborSet) {
        let mut rng = RngStream::new(seed);
        let pos: Vec<Pair> =
            (0..n).flat_map(|i| (0..n_in).map(move |j| Pair::new(i, j))).filter(|_| rng.uniform() < 0.4).collect();
        let assoc = AssociationMatrix::from_positives(
            (0..n).map(|i| format!("i{i}")).collect(),
            (0..n_in).map(|j| format!("j{j}")).collect(),
            &pos,
        )
        .unwrap();
        let mut rng = RngStream::new(seed ^ 1);
        let mut params = EncoderParams::init(n_in, k, &mut rng);
        for p in params.tensors_mut() {
            for x in p.value.as_mut_slice() {
                *x += rng.uniform_in(-0.5, 0.5);
            }
        }
        let sim_vals: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
        let mut s = DenseMatrix::from_vec(n, n, sim_vals).unwrap();
        for a in 0..n {
            s.set(a, a, 1.0);
            for b in 0..a {
                let v = s.get(a, b);
                s.set(b, a, v);
            }
        }
        let sim = SimilarityMatrix::new((0..n).map(|i| format!("i{i}")).collect(), s).unwrap();
        (Profiles::drugs(&assoc), params, NeighborSet::from_similarity(&sim, Some(3), false))
    }

    fn side_grads(items: &[usize], profiles: &Profiles, p: &mut EncoderParams, nb: &NeighborSet) {
        p.zero_grad();
        let latents = encode_all(profiles, p, Exec::Sequential);
        let mut lg = DenseMatrix::zeros(latents.len(), latents.latent_dim());
        reconstruction_backward(items, profiles, p, &latents, 1.0, &mut lg, Exec::Sequential);
        regularizer_backward(items, &latents, nb, 1.0, &mut lg);
        encoder_backward(&lg, &latents, profiles, p);
    }

    fn as_vec(p: &EncoderParams) -> Vec<ParamTensor> {
        p.tensors().into_iter().cloned().collect()
    }

    fn from_vec(ps: &[ParamTensor]) -> EncoderParams {
        EncoderParams { w_enc: ps[0].clone(), b_enc: ps[1].clone(), v_dec: ps[2].clone(), b_dec: ps[3].clone() }
    }

    #[test]
    fn side_loss_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (profiles, mut p, nb) = random_side(seed, 6, 5, 3);
            let items = [0, 2, 3, 5];
            side_grads(&items, &profiles, &mut p, &nb);
            let mut ps = as_vec(&p);
            let loss = |ps: &[ParamTensor]| {
                let q = from_vec(ps);
                let lat = encode_all(&profiles, &q, Exec::Sequential);
                side_loss(&items, &profiles, &q, &lat, &nb).unwrap()
            };
            let err = finite_diff_check(loss, &mut ps, 1e-5, 200, &mut RngStream::new(seed)).unwrap();
            assert!(err <= 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_neighbor_weights_reduce_to_plain_autoencoder() {
        let (profiles, mut p, nb) = random_side(11, 6, 5, 3);
        let zeroed =
            NeighborSet { lists: nb.lists.iter().map(|l| l.iter().map(|&(j, _)| (j, 0.0)).collect()).collect() };
        let items = [0, 1, 4];
        side_grads(&items, &profiles, &mut p, &zeroed);
        let with_zeros = as_vec(&p);
        side_grads(&items, &profiles, &mut p, &NeighborSet::empty(6));
        let plain = as_vec(&p);
        for (a, b) in with_zeros.iter().zip(&plain) {
            assert_eq!(a.grad, b.grad);
        }
        let mut ps = plain;
        let loss = |ps: &[ParamTensor]| {
            let q = from_vec(ps);
            let lat = encode_all(&profiles, &q, Exec::Sequential);
            side_loss(&items, &profiles, &q, &lat, &NeighborSet::empty(6)).unwrap()
        };
        assert!(finite_diff_check(loss, &mut ps, 1e-5, 100, &mut RngStream::new(5)).unwrap() <= 1e-6);
    }

    #[test]
    fn side_loss_non_negative() {
        for seed in 0..20 {
            let (profiles, p, nb) = random_side(seed, 5, 4, 2);
            let lat = encode_all(&profiles, &p, Exec::Sequential);
            assert!(side_loss(&[0, 1, 2, 3, 4], &profiles, &p, &lat, &nb).unwrap() >= 0.0);
        }
    }
}
