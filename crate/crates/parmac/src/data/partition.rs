//! Shard partitioning proportional to machine speeds.

use super::DataError;

/// A disjoint cover of `0..n` by contiguous index ranges, one per machine,
/// with sizes proportional to the speed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    sizes: Vec<usize>,
    starts: Vec<usize>,
}

impl Partition {
    pub fn machines(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, machine: usize) -> usize {
        self.sizes[machine]
    }

    pub fn range(&self, machine: usize) -> std::ops::Range<usize> {
        self.starts[machine]..self.starts[machine] + self.sizes[machine]
    }

    pub fn indices(&self, machine: usize) -> Vec<usize> {
        self.range(machine).collect()
    }
}

/// Splits `n` points over machines with relative speeds `speeds` using
/// largest-remainder rounding: each machine gets `floor(n * speed / total)`
/// points and the leftovers go to the largest fractional remainders, ties
/// broken toward the lower machine index.
pub fn partition(n: usize, speeds: &[f64]) -> Result<Partition, DataError> {
    if speeds.is_empty() {
        return Err(DataError::InvalidArgument("no machines".into()));
    }
    if speeds.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(DataError::InvalidArgument(
            "machine speeds must be positive and finite".into(),
        ));
    }
    let p = speeds.len();
    let total: f64 = speeds.iter().sum();
    let mut sizes: Vec<usize> = Vec::with_capacity(p);
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(p);
    let mut assigned = 0usize;
    for (m, &s) in speeds.iter().enumerate() {
        let ideal = n as f64 * s / total;
        let base = ideal.floor() as usize;
        sizes.push(base);
        fracs.push((m, ideal - base as f64));
        assigned += base;
    }
    // Hand out the leftover points by descending fractional remainder. The
    // float floor can only over- or under-assign by a point or two in
    // pathological cases; the reverse direction trims from the smallest
    // remainders.
    if assigned <= n {
        let mut order = fracs.clone();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for k in 0..n - assigned {
            sizes[order[k % p].0] += 1;
        }
    } else {
        let mut order = fracs.clone();
        order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
        let mut to_remove = assigned - n;
        for &(m, _) in order.iter().cycle() {
            if to_remove == 0 {
                break;
            }
            if sizes[m] > 0 {
                sizes[m] -= 1;
                to_remove -= 1;
            }
        }
    }
    for (m, &sz) in sizes.iter().enumerate() {
        if sz == 0 {
            return Err(DataError::EmptyShard {
                machine: m,
                n,
                machines: p,
            });
        }
    }
    let mut starts = Vec::with_capacity(p);
    let mut acc = 0;
    for &sz in &sizes {
        starts.push(acc);
        acc += sz;
    }
    debug_assert_eq!(acc, n);
    Ok(Partition { sizes, starts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_speeds_divisible() {
        let p = partition(40, &[1.0; 4]).unwrap();
        assert_eq!(
            (0..4).map(|m| p.size(m)).collect::<Vec<_>>(),
            vec![10, 10, 10, 10]
        );
        assert_eq!(p.range(2), 20..30);
    }

    #[test]
    fn remainder_tie_goes_to_lower_index() {
        let p = partition(10, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            (0..3).map(|m| p.size(m)).collect::<Vec<_>>(),
            vec![4, 3, 3]
        );
    }

    #[test]
    fn proportional_to_speeds() {
        let p = partition(40, &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            (0..3).map(|m| p.size(m)).collect::<Vec<_>>(),
            vec![20, 10, 10]
        );
    }

    #[test]
    fn empty_shard_is_an_error() {
        assert!(matches!(
            partition(2, &[1.0, 1.0, 1.0]),
            Err(DataError::EmptyShard { .. })
        ));
    }

    #[test]
    fn rejects_bad_speeds() {
        assert!(partition(10, &[]).is_err());
        assert!(partition(10, &[1.0, 0.0]).is_err());
        assert!(partition(10, &[1.0, -2.0]).is_err());
        assert!(partition(10, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn ranges_are_disjoint_cover() {
        let p = partition(17, &[3.0, 1.0, 2.0]).unwrap();
        let mut seen = vec![false; 17];
        for m in 0..3 {
            for i in p.range(m) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sizes_within_one_point_of_ideal() {
        // |size_p - n*alpha_p/total| < 1 + (P-1)/P under largest-remainder
        // rounding.
        let speeds = [0.3, 1.7, 2.0, 0.9, 1.1];
        let total: f64 = speeds.iter().sum();
        for n in [7usize, 23, 100, 997] {
            let p = partition(n, &speeds).unwrap();
            let bound = 1.0 + (speeds.len() as f64 - 1.0) / speeds.len() as f64;
            for (m, &s) in speeds.iter().enumerate() {
                let ideal = n as f64 * s / total;
                assert!(
                    (p.size(m) as f64 - ideal).abs() < bound,
                    "n={n} machine={m} size={} ideal={ideal}",
                    p.size(m)
                );
            }
        }
    }
}
