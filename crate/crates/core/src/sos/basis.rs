use std::collections::BTreeSet;

use crate::poly::Monomial;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parity {
    #[default]
    All,
    /// Only monomials of even total degree.
    Even,
}

/// All monomials in `nvars` variables of total degree `<= max_deg` that pass
/// the parity filter, in ascending graded-lex order.
pub fn monomial_basis(nvars: usize, max_deg: u32, parity: Parity) -> Vec<Monomial> {
    let caps = vec![max_deg; nvars];
    let mut out = bounded_monomials(&caps, max_deg);
    if parity == Parity::Even {
        out.retain(|m| m.degree() % 2 == 0);
    }
    out
}

/// Monomials with per-variable exponent caps and a total-degree cap, sorted.
pub(crate) fn bounded_monomials(caps: &[u32], max_deg: u32) -> Vec<Monomial> {
    fn rec(caps: &[u32], left: u32, i: usize, cur: &mut Vec<u16>, out: &mut Vec<Monomial>) {
        if i == caps.len() {
            out.push(Monomial::from_exponents(cur));
            return;
        }
        for e in 0..=caps[i].min(left) {
            cur[i] = e as u16;
            rec(caps, left - e, i + 1, cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0u16; caps.len()];
    rec(caps, max_deg, 0, &mut cur, &mut out);
    out.sort();
    out
}

/// Gram basis for an expression whose possible support is `support`.
///
/// Starts from all monomials of degree at most half the top degree and keeps
/// those whose doubled weight lies between the smallest and largest weight
/// of the support, for the all-ones weight, each coordinate weight and each
/// extra variable group. Every such slab contains half the Newton polytope
/// of any polynomial with this support, so no SOS decomposition is lost.
pub fn gram_basis(nvars: usize, support: &BTreeSet<Monomial>, groups: &[Vec<usize>]) -> Vec<Monomial> {
    if support.is_empty() {
        return Vec::new();
    }
    let mut weights: Vec<Vec<usize>> = vec![(0..nvars).collect()];
    weights.extend((0..nvars).map(|i| vec![i]));
    weights.extend(groups.iter().filter(|g| !g.is_empty()).cloned());

    let ranges: Vec<(u32, u32)> = weights
        .iter()
        .map(|w| {
            let vals = support.iter().map(|m| m.degree_in(w));
            let lo = vals.clone().min().unwrap();
            let hi = vals.max().unwrap();
            (lo, hi)
        })
        .collect();
    let total_hi = ranges[0].1 / 2;
    let caps: Vec<u32> = (0..nvars).map(|i| ranges[1 + i].1 / 2).collect();
    let mut out = bounded_monomials(&caps, total_hi);
    out.retain(|m| {
        weights.iter().zip(&ranges).all(|(w, &(lo, hi))| {
            let d = 2 * m.degree_in(w);
            lo <= d && d <= hi
        })
    });
    out
}

/// Sign symmetries `x_g → −x_g` (for the listed groups) that leave every
/// support monomial invariant. Each returned group splits the Gram matrix
/// into blocks of equal parity.
pub fn invariant_sign_groups(
    nvars: usize,
    support: &BTreeSet<Monomial>,
    groups: &[Vec<usize>],
) -> Vec<Vec<usize>> {
    let mut cands: Vec<Vec<usize>> = vec![(0..nvars).collect()];
    cands.extend((0..nvars).map(|i| vec![i]));
    cands.extend(groups.iter().filter(|g| !g.is_empty()).cloned());
    cands.dedup();
    cands
        .into_iter()
        .filter(|g| support.iter().all(|m| m.degree_in(g) % 2 == 0))
        .collect()
}

/// Partition `basis` by parity signature under the given sign groups.
/// Blocks are ordered by signature, entries keep their basis order.
pub fn split_by_parity(basis: &[Monomial], groups: &[Vec<usize>]) -> Vec<Vec<Monomial>> {
    let mut keyed: Vec<(Vec<u32>, &Monomial)> = basis
        .iter()
        .map(|m| (groups.iter().map(|g| m.degree_in(g) % 2).collect(), m))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let mut blocks: Vec<Vec<Monomial>> = Vec::new();
    let mut last: Option<Vec<u32>> = None;
    for (k, m) in keyed {
        if last.as_ref() != Some(&k) {
            blocks.push(Vec::new());
            last = Some(k);
        }
        blocks.last_mut().unwrap().push(m.clone());
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn basis_counts() {
        let b = monomial_basis(1, 2, Parity::All);
        assert_eq!(
            b,
            vec![
                Monomial::from_exponents(&[0]),
                Monomial::from_exponents(&[1]),
                Monomial::from_exponents(&[2])
            ]
        );
        assert_eq!(monomial_basis(2, 2, Parity::All).len(), 6);
        for n in 1..5u64 {
            for d in 0..6u64 {
                let got = monomial_basis(n as usize, d as u32, Parity::All).len() as u64;
                assert_eq!(got, binom(n + d, d));
            }
        }
    }

    #[test]
    fn even_filter() {
        let b = monomial_basis(2, 2, Parity::Even);
        let want: Vec<Monomial> = [[0, 0], [2, 0], [1, 1], [0, 2]]
            .iter()
            .map(|e| Monomial::from_exponents(e))
            .collect();
        assert_eq!(b, want);
    }

    #[test]
    fn slab_reduction() {
        // x^2 needs x but not 1.
        let s: BTreeSet<Monomial> = [Monomial::from_exponents(&[2])].into_iter().collect();
        assert_eq!(gram_basis(1, &s, &[]), vec![Monomial::from_exponents(&[1])]);

        // Quadratic in z = (x2, x3): every basis element is linear in z.
        let s: BTreeSet<Monomial> = [[2, 2, 0], [0, 1, 1], [4, 0, 2], [0, 2, 0]]
            .iter()
            .map(|e| Monomial::from_exponents(e))
            .collect();
        let b = gram_basis(3, &s, &[vec![1, 2]]);
        assert!(!b.is_empty());
        assert!(b.iter().all(|m| m.degree_in(&[1, 2]) == 1));
    }

    #[test]
    fn parity_split() {
        let s: BTreeSet<Monomial> = [[4], [2], [0]]
            .iter()
            .map(|e| Monomial::from_exponents(e))
            .collect();
        let groups = invariant_sign_groups(1, &s, &[]);
        assert!(!groups.is_empty());
        let basis = gram_basis(1, &s, &[]);
        let blocks = split_by_parity(&basis, &groups);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 2);
        assert_eq!(blocks[1], vec![Monomial::from_exponents(&[1])]);
    }
}
