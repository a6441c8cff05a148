//! Asymmetric scalar-product preserving encryption.
//!
//! A partition key holds a 0/1 split indicator `S` and two invertible
//! matrices. Index vectors are split so that `S[t] = 1` positions are shared
//! randomly between the halves and `S[t] = 0` positions are copied; query
//! vectors use the complementary rule. Then
//! `c = (M1^T v1, M2^T v2)`, `t = (M1^-1 q1, M2^-1 q2)` and
//! `c1 . t1 + c2 . t2 = v . q`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::{rng, Error, PartitionId, Result};

/// Number of `L * U` factor pairs multiplied into each key matrix.
pub const FACTORS: usize = 3;
/// Largest accepted `||M||_inf * ||M^-1||_inf`.
pub const CONDITION_CAP: f64 = 1e6;
const ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionKey {
    split: Vec<u8>,
    m1: Matrix,
    m2: Matrix,
    m1_inv: Matrix,
    m2_inv: Matrix,
}

impl PartitionKey {
    /// Key with identity matrices and the given split indicator.
    pub fn identity(split: Vec<u8>) -> Self {
        let n = split.len();
        Self { split, m1: Matrix::identity(n), m2: Matrix::identity(n), m1_inv: Matrix::identity(n), m2_inv: Matrix::identity(n) }
    }

    /// Assembles a key from stored parts, checking shapes and that each
    /// matrix times its inverse is the identity.
    pub fn from_parts(split: Vec<u8>, m1: Matrix, m2: Matrix, m1_inv: Matrix, m2_inv: Matrix) -> Result<Self> {
        let n = split.len();
        if split.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter("split indicator entries must be 0 or 1"));
        }
        for m in [&m1, &m2, &m1_inv, &m2_inv] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::Dimension { expected: n, actual: m.rows() });
            }
        }
        let key = Self { split, m1, m2, m1_inv, m2_inv };
        if key.inverse_error()? > 1e-6 {
            return Err(Error::InvalidParameter("key matrices do not match their inverses"));
        }
        Ok(key)
    }

    /// `V_i`.
    pub fn dim(&self) -> usize {
        self.split.len()
    }

    pub fn split(&self) -> &[u8] {
        &self.split
    }

    pub fn matrices(&self) -> [&Matrix; 4] {
        [&self.m1, &self.m2, &self.m1_inv, &self.m2_inv]
    }

    /// Largest elementwise deviation of `M * M^-1` from the identity over both matrices.
    pub fn inverse_error(&self) -> Result<f64> {
        let a = self.m1.matmul(&self.m1_inv)?.max_identity_error();
        let b = self.m2.matmul(&self.m2_inv)?.max_identity_error();
        Ok(a.max(b))
    }

    pub fn condition(&self) -> f64 {
        let a = self.m1.inf_norm() * self.m1_inv.inf_norm();
        let b = self.m2.inf_norm() * self.m2_inv.inf_norm();
        a.max(b)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), actual: len });
        }
        Ok(())
    }
}

/// One key per partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretKey {
    pub partitions: Vec<PartitionKey>,
}

impl SecretKey {
    pub fn partition(&self, id: PartitionId) -> Result<&PartitionKey> {
        self.partitions.get(id.0).ok_or(Error::UnknownPartition(id))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.partitions.iter().map(PartitionKey::dim).collect()
    }
}

/// Random invertible matrix `prod_k L_k U_k` and its inverse. Off-diagonal
/// factor entries are uniform in `[-1, 1] / sqrt(n)`.
fn random_invertible<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(Matrix, Matrix)> {
    let scale = 1.0 / libm::sqrt(n.max(1) as f64);
    let mut m = Matrix::identity(n);
    let mut inv = Matrix::identity(n);
    for _ in 0..FACTORS {
        let l = Matrix::random_unit_lower(n, scale, rng);
        let u = Matrix::random_unit_lower(n, scale, rng).transpose();
        let l_inv = l.unit_lower_inverse();
        let u_inv = u.transpose().unit_lower_inverse().transpose();
        m = m.matmul(&l)?.matmul(&u)?;
        inv = u_inv.matmul(&l_inv)?.matmul(&inv)?;
    }
    Ok((m, inv))
}

/// Generates a key of dimension `dim` from an explicit stream.
pub fn keygen_partition<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<PartitionKey> {
    if dim == 0 {
        return Err(Error::InvalidParameter("key dimension must be >= 1"));
    }
    for _ in 0..ATTEMPTS {
        let split = (0..dim).map(|_| rng.gen_range(0..=1u8)).collect();
        let (m1, m1_inv) = random_invertible(dim, rng)?;
        let (m2, m2_inv) = random_invertible(dim, rng)?;
        let key = PartitionKey { split, m1, m2, m1_inv, m2_inv };
        if key.condition() <= CONDITION_CAP {
            return Ok(key);
        }
    }
    Err(Error::IllConditioned { cap: CONDITION_CAP, attempts: ATTEMPTS })
}

/// One independent key per partition dimension.
pub fn keygen(dims: &[usize], seed: u64) -> Result<SecretKey> {
    let partitions = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| keygen_partition(d, &mut rng::stream(seed, &[rng::label::KEYGEN, i as u64])))
        .collect::<Result<_>>()?;
    Ok(SecretKey { partitions })
}

/// Fresh key for a partition that grew by `added` keyword dimensions. Every
/// ciphertext made under `old` must be re-encrypted.
pub fn extend_key<R: Rng + ?Sized>(old: &PartitionKey, added: usize, rng: &mut R) -> Result<PartitionKey> {
    if added == 0 {
        return Err(Error::InvalidParameter("extension needs at least one new keyword"));
    }
    keygen_partition(old.dim() + added, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedVector {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trapdoor {
    pub partition: PartitionId,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
}

fn split_index<R: Rng + ?Sized>(v: &[f64], split: &[u8], rng: &mut R, v1: &mut [f64], v2: &mut [f64]) {
    for t in 0..v.len() {
        if split[t] == 1 {
            let r = rng::open_unit(rng);
            v1[t] = r;
            v2[t] = v[t] - r;
        } else {
            v1[t] = v[t];
            v2[t] = v[t];
        }
    }
}

pub fn encrypt_vector<R: Rng + ?Sized>(v: &[f64], key: &PartitionKey, rng: &mut R) -> Result<EncryptedVector> {
    key.check(v.len())?;
    let n = v.len();
    let (mut v1, mut v2) = (vec![0.0; n], vec![0.0; n]);
    split_index(v, &key.split, rng, &mut v1, &mut v2);
    Ok(EncryptedVector { c1: key.m1.tr_mul_vec(&v1)?, c2: key.m2.tr_mul_vec(&v2)? })
}

/// Encrypts many vectors with two matrix products instead of `2 * len` matrix-vector products.
pub fn encrypt_batch<R: Rng + ?Sized>(vectors: &[&[f64]], key: &PartitionKey, rng: &mut R) -> Result<Vec<EncryptedVector>> {
    let n = key.dim();
    let rows = vectors.len();
    let mut x1 = vec![0.0; rows * n];
    let mut x2 = vec![0.0; rows * n];
    for (i, v) in vectors.iter().enumerate() {
        key.check(v.len())?;
        split_index(v, &key.split, rng, &mut x1[i * n..(i + 1) * n], &mut x2[i * n..(i + 1) * n]);
    }
    // row i of X * M equals (M^T x_i)^T
    let c1 = Matrix::from_rows(rows, n, x1)?.matmul(&key.m1)?;
    let c2 = Matrix::from_rows(rows, n, x2)?.matmul(&key.m2)?;
    Ok((0..rows).map(|i| EncryptedVector { c1: c1.row(i).to_vec(), c2: c2.row(i).to_vec() }).collect())
}

/// Rejects query vectors with negative entries; tree pruning relies on `q >= 0`.
pub fn validate_query(q: &[f64]) -> Result<()> {
    match q.iter().position(|&x| !(x >= 0.0)) {
        Some(position) => Err(Error::NegativeQuery { position, value: q[position] }),
        None => Ok(()),
    }
}

pub fn make_trapdoor<R: Rng + ?Sized>(
    partition: PartitionId,
    q: &[f64],
    key: &PartitionKey,
    rng: &mut R,
) -> Result<Trapdoor> {
    key.check(q.len())?;
    validate_query(q)?;
    let n = q.len();
    let (mut q1, mut q2) = (vec![0.0; n], vec![0.0; n]);
    for t in 0..n {
        if key.split[t] == 0 {
            let r = rng::open_unit(rng);
            q1[t] = r;
            q2[t] = q[t] - r;
        } else {
            q1[t] = q[t];
            q2[t] = q[t];
        }
    }
    Ok(Trapdoor { partition, t1: key.m1_inv.mul_vec(&q1)?, t2: key.m2_inv.mul_vec(&q2)? })
}

pub fn score(e: &EncryptedVector, t: &Trapdoor) -> Result<f64> {
    if e.c1.len() != t.t1.len() || e.c2.len() != t.t2.len() {
        return Err(Error::Dimension { expected: t.t1.len(), actual: e.c1.len() });
    }
    Ok(score_unchecked(e, t))
}

#[inline]
pub(crate) fn score_unchecked(e: &EncryptedVector, t: &Trapdoor) -> f64 {
    dot(&e.c1, &t.t1) + dot(&e.c2, &t.t2)
}

/// Inverts the encryption with the secret key.
pub fn decrypt(e: &EncryptedVector, key: &PartitionKey) -> Result<Vec<f64>> {
    key.check(e.c1.len())?;
    key.check(e.c2.len())?;
    let v1 = key.m1_inv.tr_mul_vec(&e.c1)?;
    let v2 = key.m2_inv.tr_mul_vec(&e.c2)?;
    Ok((0..key.dim())
        .map(|t| if key.split[t] == 1 { v1[t] + v2[t] } else { 0.5 * (v1[t] + v2[t]) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(rng: &mut rng::StreamRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn identity_key_with_zero_split_copies() {
        let key = PartitionKey::identity(vec![0, 0]);
        let mut r = rng::stream(1, &[]);
        let e = encrypt_vector(&[0.3, 0.7], &key, &mut r).unwrap();
        assert_eq!(e.c1, vec![0.3, 0.7]);
        assert_eq!(e.c2, vec![0.3, 0.7]);
    }

    #[test]
    fn split_identity() {
        let key = PartitionKey::identity(vec![0, 1, 1, 0]);
        let mut r = rng::stream(2, &[]);
        let v = [0.5, 0.25, 1.0, 0.0];
        let e = encrypt_vector(&v, &key, &mut r).unwrap();
        for t in 0..4 {
            let sum = e.c1[t] + e.c2[t];
            let want = if key.split()[t] == 0 { 2.0 * v[t] } else { v[t] };
            assert!((sum - want).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_key_scores_exactly() {
        let key = PartitionKey::identity(vec![1, 0, 1]);
        let mut r = rng::stream(3, &[]);
        let e = encrypt_vector(&[0.0, 1.0, 0.0], &key, &mut r).unwrap();
        let t = make_trapdoor(PartitionId(0), &[0.0, 1.0, 0.0], &key, &mut r).unwrap();
        assert!((score(&e, &t).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generated_keys_invert_and_are_conditioned() {
        let key = keygen(&[5, 40], 11).unwrap();
        assert_eq!(key.dims(), vec![5, 40]);
        for p in &key.partitions {
            assert!(p.inverse_error().unwrap() < 1e-9);
            assert!(p.condition() <= CONDITION_CAP);
        }
        assert_ne!(key.partitions[0].m1, key.partitions[0].m2);
    }

    #[test]
    fn score_matches_plain_inner_product() {
        let key = keygen(&[64], 5).unwrap();
        let pk = &key.partitions[0];
        let mut r = rng::stream(6, &[]);
        for _ in 0..200 {
            let v: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
            let q = random_vec(&mut r, 64);
            let plain: f64 = v.iter().zip(&q).map(|(a, b)| a * b).sum();
            let got = score(&encrypt_vector(&v, pk, &mut r).unwrap(), &make_trapdoor(PartitionId(0), &q, pk, &mut r).unwrap()).unwrap();
            assert!((got - plain).abs() <= 1e-6 * (1.0 + plain.abs()));
        }
    }

    #[test]
    fn batch_matches_single() {
        let key = keygen(&[16], 8).unwrap();
        let pk = &key.partitions[0];
        let mut r = rng::stream(1, &[]);
        let vs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut r, 16)).collect();
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let batch = encrypt_batch(&refs, pk, &mut rng::stream(2, &[])).unwrap();
        let mut r2 = rng::stream(2, &[]);
        for (v, e) in vs.iter().zip(&batch) {
            let single = encrypt_vector(v, pk, &mut r2).unwrap();
            for (a, b) in single.c1.iter().chain(&single.c2).zip(e.c1.iter().chain(&e.c2)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decrypt_roundtrip() {
        let key = keygen(&[32], 9).unwrap();
        let pk = &key.partitions[0];
        let mut r = rng::stream(3, &[]);
        let v = random_vec(&mut r, 32);
        let back = decrypt(&encrypt_vector(&v, pk, &mut r).unwrap(), pk).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn randomized_encryption_and_trapdoors() {
        let key = keygen(&[12], 4).unwrap();
        let pk = &key.partitions[0];
        let mut r = rng::stream(5, &[]);
        let v = random_vec(&mut r, 12);
        let q = random_vec(&mut r, 12);
        let (e1, e2) = (encrypt_vector(&v, pk, &mut r).unwrap(), encrypt_vector(&v, pk, &mut r).unwrap());
        let (t1, t2) = (make_trapdoor(PartitionId(0), &q, pk, &mut r).unwrap(), make_trapdoor(PartitionId(0), &q, pk, &mut r).unwrap());
        assert_ne!(e1, e2);
        assert_ne!(t1, t2);
        let s = score(&e1, &t1).unwrap();
        for (e, t) in [(&e1, &t2), (&e2, &t1), (&e2, &t2)] {
            assert!((score(e, t).unwrap() - s).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_query_scores_zero() {
        let key = keygen(&[10], 2).unwrap();
        let pk = &key.partitions[0];
        let mut r = rng::stream(5, &[]);
        let t = make_trapdoor(PartitionId(0), &[0.0; 10], pk, &mut r).unwrap();
        for _ in 0..20 {
            let v = random_vec(&mut r, 10);
            assert!(score(&encrypt_vector(&v, pk, &mut r).unwrap(), &t).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let key = keygen(&[4], 1).unwrap();
        let pk = &key.partitions[0];
        let mut r = rng::stream(5, &[]);
        assert!(matches!(encrypt_vector(&[1.0], pk, &mut r), Err(Error::Dimension { .. })));
        assert!(matches!(
            make_trapdoor(PartitionId(0), &[1.0, -0.5, 0.0, 0.0], pk, &mut r),
            Err(Error::NegativeQuery { position: 1, .. })
        ));
        assert!(extend_key(pk, 0, &mut r).is_err());
        let wider = extend_key(pk, 2, &mut r).unwrap();
        assert_eq!(wider.dim(), 6);
        assert_eq!(wider.matrices()[0].rows(), 6);
        assert!(keygen(&[0], 1).is_err());
    }
}
