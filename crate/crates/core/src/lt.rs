//! Luby-Transform rateless codec over feature-map partitions.
//!
//! An encoded symbol sums `d` distinct source partitions, `d` drawn from the
//! Robust Soliton distribution. The decoder tracks the rank of the received
//! encoding vectors over GF(2); once it reaches `k` the selected 0/1 rows are
//! also invertible over the reals (an odd determinant is non-zero) and the
//! sources are recovered by a real LU solve of those rows.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::scalar::Scalar;

pub const DEFAULT_C: f64 = 0.03;
pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustSolitonParams {
    pub k: usize,
    pub c: f64,
    pub delta: f64,
}

impl RobustSolitonParams {
    pub fn new(k: usize, c: f64, delta: f64) -> Result<Self> {
        if k == 0 || !(c > 0.0) || !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("robust soliton needs k>=1, c>0, 0<delta<1; got k={k}, c={c}, delta={delta}")));
        }
        Ok(Self { k, c, delta })
    }

    pub fn with_defaults(k: usize) -> Result<Self> {
        Self::new(k, DEFAULT_C, DEFAULT_DELTA)
    }
}

/// Degree distribution; `pmf()[d - 1]` is the probability of degree `d`.
#[derive(Debug, Clone)]
pub struct RobustSoliton {
    params: RobustSolitonParams,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl RobustSoliton {
    pub fn new(params: RobustSolitonParams) -> Self {
        let pmf = robust_soliton(params.k, params.c, params.delta);
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Self { params, pmf, cdf }
    }

    pub fn params(&self) -> RobustSolitonParams {
        self.params
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean_degree(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }

    pub fn sample_degree<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) + 1
    }
}

/// Robust Soliton probabilities over degrees `1..=k`: the ideal soliton
/// `rho` plus the spike/tail `tau` with `R = c ln(k/delta) sqrt(k)`,
/// normalised.
///
/// Panics on invalid parameters; validate with [`RobustSolitonParams::new`].
pub fn robust_soliton(k: usize, c: f64, delta: f64) -> Vec<f64> {
    assert!(k >= 1 && c > 0.0 && delta > 0.0 && delta < 1.0);
    if k == 1 {
        return vec![1.0];
    }
    let kf = k as f64;
    let r = c * (kf / delta).ln() * kf.sqrt();
    let spike = ((kf / r).floor() as usize).clamp(1, k);
    let mut weights = vec![0.0; k];
    for d in 1..=k {
        let rho = if d == 1 { 1.0 / kf } else { 1.0 / (d as f64 * (d as f64 - 1.0)) };
        let tau = if d < spike {
            r / (d as f64 * kf)
        } else if d == spike {
            (r * (r / delta).ln() / kf).max(0.0)
        } else {
            0.0
        };
        weights[d - 1] = rho + tau;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

/// Packed GF(2) row of length `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitRow {
    k: usize,
    words: Vec<u64>,
}

impl BitRow {
    pub fn zeros(k: usize) -> Self {
        Self { k, words: vec![0; k.div_ceil(64)] }
    }

    pub fn from_indices(k: usize, indices: &[usize]) -> Self {
        let mut row = Self::zeros(k);
        for &i in indices {
            row.set(i);
        }
        row
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.k);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn lowest_set(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn xor_assign(&mut self, other: &Self) {
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a ^= b);
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(|&i| self.get(i))
    }

    /// Little-endian bit order, padded to whole bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.k.div_ceil(8))
            .map(|b| (self.words[b / 8] >> (8 * (b % 8))) as u8)
            .collect()
    }

    pub fn from_bytes(k: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != k.div_ceil(8) {
            return Err(Error::Format(format!("{k}-bit vector needs {} bytes, got {}", k.div_ceil(8), bytes.len())));
        }
        let mut row = Self::zeros(k);
        for (b, &byte) in bytes.iter().enumerate() {
            row.words[b / 8] |= (byte as u64) << (8 * (b % 8));
        }
        if k % 8 != 0 && bytes[bytes.len() - 1] >> (k % 8) != 0 {
            return Err(Error::Format("padding bits set".into()));
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSymbol<T> {
    pub encoding_vector: BitRow,
    pub payload: Vec<T>,
}

impl<T: Scalar> EncodedSymbol<T> {
    /// Wire form: encoding vector bytes then little-endian `f32` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.encoding_vector.to_bytes();
        for v in &self.payload {
            out.extend_from_slice(&(v.to_f64_lossless() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(k: usize, bytes: &[u8]) -> Result<Self> {
        let head = k.div_ceil(8);
        if bytes.len() < head || (bytes.len() - head) % 4 != 0 {
            return Err(Error::Format(format!("bad encoded symbol length {}", bytes.len())));
        }
        let encoding_vector = BitRow::from_bytes(k, &bytes[..head])?;
        if encoding_vector.is_zero() {
            return Err(Error::Format("empty encoding vector".into()));
        }
        let payload = bytes[head..]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Ok(Self { encoding_vector, payload })
    }
}

/// Draws an encoding vector: a Robust Soliton degree, then that many distinct
/// sources uniformly.
pub fn sample_encoding_vector<R: Rng + ?Sized>(dist: &RobustSoliton, rng: &mut R) -> BitRow {
    let k = dist.params().k;
    let d = dist.sample_degree(rng);
    let chosen = rand::seq::index::sample(rng, k, d);
    BitRow::from_indices(k, &chosen.into_vec())
}

/// Produces the next encoded symbol from the sources.
pub fn lt_encode_next<T: Scalar, S: AsRef<[T]>, R: Rng + ?Sized>(
    sources: &[S],
    dist: &RobustSoliton,
    rng: &mut R,
) -> Result<EncodedSymbol<T>> {
    if sources.len() != dist.params().k {
        return Err(Error::InvalidArgument(format!("{} sources for k={}", sources.len(), dist.params().k)));
    }
    let len = sources[0].as_ref().len();
    if sources.iter().any(|s| s.as_ref().len() != len) {
        return Err(Error::DimMismatch("sources have unequal lengths".into()));
    }
    let encoding_vector = sample_encoding_vector(dist, rng);
    Ok(combine(sources, encoding_vector))
}

/// Symbol whose payload is the sum of the sources selected by `encoding_vector`.
pub fn combine<T: Scalar, S: AsRef<[T]>>(sources: &[S], encoding_vector: BitRow) -> EncodedSymbol<T> {
    let len = sources[0].as_ref().len();
    let mut acc = vec![0.0f64; len];
    for i in encoding_vector.ones() {
        acc.iter_mut().zip(sources[i].as_ref()).for_each(|(a, v)| *a += v.to_f64_lossless());
    }
    EncodedSymbol { encoding_vector, payload: acc.into_iter().map(T::from_f64_lossy).collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeStatus<T> {
    NeedMore { rank: usize },
    Decoded(Vec<Vec<T>>),
}

/// Incremental decoder. Rank is tracked over GF(2); symbols that do not raise
/// the rank are dropped after a consistency check against exact duplicates.
#[derive(Debug, Clone)]
pub struct LtDecoder<T> {
    k: usize,
    /// Reduced row per pivot column, with the index of the basis symbol that
    /// introduced it.
    pivots: Vec<Option<BitRow>>,
    basis: Vec<EncodedSymbol<T>>,
    received: usize,
    payload_len: Option<usize>,
}

impl<T: Scalar> LtDecoder<T> {
    pub fn new(k: usize) -> Self {
        Self { k, pivots: vec![None; k], basis: Vec::new(), received: 0, payload_len: None }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn received(&self) -> usize {
        self.received
    }

    pub fn is_complete(&self) -> bool {
        self.basis.len() == self.k
    }

    /// Adds one symbol; returns whether it increased the rank.
    pub fn push(&mut self, symbol: EncodedSymbol<T>) -> Result<bool> {
        if symbol.encoding_vector.len() != self.k {
            return Err(Error::DimMismatch(format!(
                "encoding vector of length {} for k={}",
                symbol.encoding_vector.len(),
                self.k
            )));
        }
        match self.payload_len {
            Some(len) if len != symbol.payload.len() => {
                return Err(Error::DimMismatch(format!("payload length {} vs {len}", symbol.payload.len())))
            }
            _ => self.payload_len = Some(symbol.payload.len()),
        }
        self.received += 1;
        if let Some(dup) = self.basis.iter().find(|b| b.encoding_vector == symbol.encoding_vector) {
            let scale = dup.payload.iter().map(|v| v.to_f64_lossless().abs()).fold(1.0, f64::max);
            let mismatch = dup
                .payload
                .iter()
                .zip(&symbol.payload)
                .any(|(a, b)| (a.to_f64_lossless() - b.to_f64_lossless()).abs() > 1e-6 * scale);
            if mismatch {
                return Err(Error::Corruption("duplicate encoding vector with a different payload".into()));
            }
            return Ok(false);
        }
        if !self.absorb(&symbol.encoding_vector) {
            return Ok(false);
        }
        self.basis.push(symbol);
        Ok(true)
    }

    /// Rank-only insertion, for overhead studies that carry no payloads.
    pub fn push_vector(&mut self, v: &BitRow) -> bool {
        self.received += 1;
        if self.absorb(v) {
            self.basis.push(EncodedSymbol { encoding_vector: v.clone(), payload: Vec::new() });
            true
        } else {
            false
        }
    }

    fn absorb(&mut self, v: &BitRow) -> bool {
        let mut row = v.clone();
        while let Some(col) = row.lowest_set() {
            match &self.pivots[col] {
                Some(p) => row.xor_assign(p),
                None => {
                    self.pivots[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }

    pub fn status(&self) -> Result<DecodeStatus<T>> {
        if !self.is_complete() {
            return Ok(DecodeStatus::NeedMore { rank: self.rank() });
        }
        let k = self.k;
        let mut a = vec![0.0; k * k];
        for (r, s) in self.basis.iter().enumerate() {
            for c in s.encoding_vector.ones() {
                a[r * k + c] = 1.0;
            }
        }
        let lu = Lu::factor(a, k)?;
        let rhs: Vec<Vec<f64>> = self
            .basis
            .iter()
            .map(|s| s.payload.iter().map(|v| v.to_f64_lossless()).collect())
            .collect();
        Ok(DecodeStatus::Decoded(
            lu.solve_rows(&rhs)
                .into_iter()
                .map(|r| r.into_iter().map(T::from_f64_lossy).collect())
                .collect(),
        ))
    }

    /// Convenience: feed a batch and report the status.
    pub fn decode_stream(&mut self, symbols: impl IntoIterator<Item = EncodedSymbol<T>>) -> Result<DecodeStatus<T>> {
        for s in symbols {
            self.push(s)?;
            if self.is_complete() {
                break;
            }
        }
        self.status()
    }
}

/// Summary of the number of symbols needed to decode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadStats {
    pub trials: usize,
    pub mean: f64,
    pub min: usize,
    pub p50: usize,
    pub p95: usize,
    pub max: usize,
}

/// Monte Carlo distribution of the symbols-to-decode count `n_d`.
pub fn lt_overhead_trial(params: RobustSolitonParams, trials: usize, seed: u64) -> Result<OverheadStats> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let dist = RobustSoliton::new(params);
    let mut counts: Vec<usize> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut dec = LtDecoder::<f64>::new(params.k);
            while !dec.is_complete() {
                let v = sample_encoding_vector(&dist, &mut rng);
                dec.push_vector(&v);
            }
            dec.received()
        })
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / trials as f64;
    counts.sort_unstable();
    let q = |p: f64| counts[((p * (trials - 1) as f64).round() as usize).min(trials - 1)];
    Ok(OverheadStats { trials, mean, min: counts[0], p50: q(0.5), p95: q(0.95), max: counts[trials - 1] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soliton_small_cases() {
        assert_eq!(robust_soliton(1, 0.03, 0.5), vec![1.0]);
        assert!(RobustSolitonParams::new(0, 0.03, 0.5).is_err());
        assert!(RobustSolitonParams::new(5, 0.0, 0.5).is_err());
        assert!(RobustSolitonParams::new(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn soliton_k100_regression() {
        let p = robust_soliton(100, 0.03, 0.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean: f64 = p.iter().enumerate().map(|(i, q)| (i + 1) as f64 * q).sum();
        assert!((4.0..=12.0).contains(&mean));
        // independent evaluation of the closed form: R = 0.03 ln(200) 10 = 1.5895, spike at 62
        assert!((mean - 6.675_704_5).abs() < 1e-6, "mean degree {mean}");
    }

    #[test]
    fn ideal_component_degree_two() {
        // with a tiny c the tail vanishes and the ideal soliton remains
        for k in [2usize, 10, 50] {
            let p = robust_soliton(k, 1e-9, 0.5);
            assert!((p[1] - 0.5).abs() < 1e-6, "k={k}: {}", p[1]);
        }
    }

    fn src() -> Vec<Vec<f64>> {
        vec![vec![1.0, 2.0], vec![10.0, 20.0], vec![100.0, 200.0]]
    }

    #[test]
    fn combine_selects_sources() {
        let s = combine(&src(), BitRow::from_indices(3, &[0]));
        assert_eq!(s.payload, vec![1.0, 2.0]);
        let all = combine(&src(), BitRow::from_indices(3, &[0, 1, 2]));
        assert_eq!(all.payload, vec![111.0, 222.0]);
        assert_eq!(all.encoding_vector.count_ones(), 3);
    }

    #[test]
    fn encoder_is_deterministic() {
        let dist = RobustSoliton::new(RobustSolitonParams::with_defaults(3).unwrap());
        let stream = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| lt_encode_next(&src(), &dist, &mut rng).unwrap()).collect::<Vec<EncodedSymbol<f64>>>()
        };
        assert_eq!(stream(9), stream(9));
        assert!(stream(9).iter().all(|s| s.encoding_vector.count_ones() >= 1));
    }

    #[test]
    fn decode_two_sources() {
        let x1 = vec![1.0, -2.0];
        let x2 = vec![0.5, 4.0];
        let srcs = [x1.clone(), x2.clone()];
        let mut dec = LtDecoder::new(2);
        let st = dec
            .decode_stream([combine(&srcs, BitRow::from_indices(2, &[0])), combine(&srcs, BitRow::from_indices(2, &[0, 1]))])
            .unwrap();
        assert_eq!(st, DecodeStatus::Decoded(vec![x1, x2]));
    }

    #[test]
    fn dependent_rows_need_more() {
        let srcs = [vec![1.0], vec![2.0]];
        let mut dec = LtDecoder::<f64>::new(2);
        let a = combine(&srcs, BitRow::from_indices(2, &[0]));
        assert!(dec.push(a.clone()).unwrap());
        assert!(!dec.push(a).unwrap());
        assert_eq!(dec.status().unwrap(), DecodeStatus::NeedMore { rank: 1 });
    }

    #[test]
    fn gf2_rejects_real_only_rank() {
        // {x1+x2, x2+x3, x1+x3} has determinant 2 over the reals but is
        // singular mod 2, so the GF(2) decoder waits for more symbols
        let srcs = src();
        let mut dec = LtDecoder::<f64>::new(3);
        for idx in [[0, 1], [1, 2], [0, 2]] {
            dec.push(combine(&srcs, BitRow::from_indices(3, &idx))).unwrap();
        }
        assert_eq!(dec.status().unwrap(), DecodeStatus::NeedMore { rank: 2 });
        dec.push(combine(&srcs, BitRow::from_indices(3, &[1]))).unwrap();
        match dec.status().unwrap() {
            DecodeStatus::Decoded(v) => assert_eq!(v, srcs),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_with_other_payload_is_corruption() {
        let mut dec = LtDecoder::<f64>::new(2);
        dec.push(EncodedSymbol { encoding_vector: BitRow::from_indices(2, &[0, 1]), payload: vec![3.0] }).unwrap();
        let err = dec
            .push(EncodedSymbol { encoding_vector: BitRow::from_indices(2, &[0, 1]), payload: vec![4.0] })
            .unwrap_err();
        assert!(matches!(err, Error::Corruption(_)));
    }

    #[test]
    fn wire_form() {
        let s = EncodedSymbol { encoding_vector: BitRow::from_indices(10, &[0, 9]), payload: vec![1.5f32] };
        let b = s.to_bytes();
        assert_eq!(&b[..2], &[0b0000_0001, 0b0000_0010]);
        assert_eq!(&b[2..], &1.5f32.to_le_bytes());
        assert_eq!(EncodedSymbol::<f32>::from_bytes(10, &b).unwrap(), s);
        assert!(EncodedSymbol::<f32>::from_bytes(10, &b[..5]).is_err());
        assert!(EncodedSymbol::<f32>::from_bytes(4, &[0x10]).is_err());
    }

    #[test]
    fn random_decode_is_exact() {
        let k = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let srcs: Vec<Vec<f64>> = (0..k).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let dist = RobustSoliton::new(RobustSolitonParams::with_defaults(k).unwrap());
        let mut dec = LtDecoder::new(k);
        while !dec.is_complete() {
            dec.push(lt_encode_next(&srcs, &dist, &mut rng).unwrap()).unwrap();
        }
        assert!(dec.received() >= k);
        let DecodeStatus::Decoded(out) = dec.status().unwrap() else { panic!() };
        let err = out.iter().flatten().zip(srcs.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn overhead_small_k() {
        let one = lt_overhead_trial(RobustSolitonParams::with_defaults(1).unwrap(), 50, 1).unwrap();
        assert_eq!((one.min, one.max), (1, 1));
        let two = lt_overhead_trial(RobustSolitonParams::with_defaults(2).unwrap(), 200, 1).unwrap();
        assert!(two.mean >= 2.0 && two.min >= 2);
    }
}
