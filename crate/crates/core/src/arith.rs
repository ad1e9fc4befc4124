//! Small integer helpers shared by the arithmetic layers.

use num_integer::Integer;

/// p-adic valuation of a nonzero integer.
pub fn vp_i128(p: u64, mut n: i128) -> u32 {
    assert!(n != 0, "valuation of zero");
    let p = p as i128;
    let mut v = 0;
    while n % p == 0 {
        n /= p;
        v += 1;
    }
    v
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn inv_mod_i64(a: i64, m: i64) -> Option<i64> {
    let g = (a as i128).extended_gcd(&(m as i128));
    if g.gcd != 1 {
        return None;
    }
    Some(g.x.rem_euclid(m as i128) as i64)
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Primes up to and including `bound`.
pub fn primes_up_to(bound: u64) -> Vec<u64> {
    (2..=bound).filter(|&n| is_prime(n)).collect()
}

/// Distinct prime divisors of `n`.
pub fn prime_divisors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Binomial coefficients C(n, k) for 0 <= k <= n < size, as u128.
pub fn binomial_table(size: usize) -> Vec<Vec<u128>> {
    let mut t = vec![vec![0u128; size]; size];
    for n in 0..size {
        t[n][0] = 1;
        for k in 1..=n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0 };
        }
    }
    t
}

/// Largest n with p^n < 2^62, the working ceiling for residues.
pub fn max_precision(p: u64) -> u32 {
    let mut n = 0;
    let mut q: u128 = 1;
    while q * (p as u128) < (1u128 << 62) {
        q *= p as u128;
        n += 1;
    }
    n
}

pub fn pow_u64(p: u64, n: u32) -> u64 {
    p.checked_pow(n).expect("power overflow")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valuation_and_inverse() {
        assert_eq!(vp_i128(3, 54), 3);
        assert_eq!(vp_i128(5, -250), 3);
        assert_eq!(inv_mod_i64(2, 9), Some(5));
        assert_eq!(inv_mod_i64(3, 9), None);
    }

    #[test]
    fn primes_and_divisors() {
        assert_eq!(primes_up_to(20), vec![2, 3, 5, 7, 11, 13, 17, 19]);
        assert_eq!(prime_divisors(160), vec![2, 5]);
        assert_eq!(prime_divisors(33), vec![3, 11]);
    }

    #[test]
    fn binomials() {
        let t = binomial_table(8);
        assert_eq!(t[7][3], 35);
        assert_eq!(t[4][4], 1);
    }

    #[test]
    fn precision_ceiling() {
        assert_eq!(max_precision(3), 39);
        assert_eq!(max_precision(5), 26);
        assert!(3u128.pow(39) < (1u128 << 62));
    }
}
