//! Exhaustive reference computations, written apart from the core solvers.

use rfim_core::lattice::{CouplingSpec, Site};

/// Spins on `sites`, couplings among them, and local fields that already
/// include the boundary spins.
pub struct Instance {
    pub sites: Vec<Site>,
    adj: Vec<Vec<(usize, f64)>>,
    pairs: Vec<(usize, usize, f64)>,
    pub local: Vec<f64>,
}

impl Instance {
    /// `local_i = h + eps eta_i + sum_{v outside} J(i, v) tau(v)`.
    pub fn new(
        sites: &[Site],
        coupling: &CouplingSpec,
        site_field: &dyn Fn(Site) -> f64,
        tau: &dyn Fn(Site) -> f64,
    ) -> Instance {
        let n = sites.len();
        let pos = |s: Site| sites.iter().position(|&w| w == s);
        let mut adj = vec![Vec::new(); n];
        let mut pairs = Vec::new();
        let mut local = vec![0.0; n];
        for (i, &u) in sites.iter().enumerate() {
            local[i] = site_field(u);
            for &(dx, dy, j) in coupling.offsets() {
                let v = u.offset(dx, dy);
                match pos(v) {
                    Some(k) => {
                        adj[i].push((k, j));
                        if k > i {
                            pairs.push((i, k, j));
                        }
                    }
                    None => local[i] += j * tau(v),
                }
            }
        }
        Instance { sites: sites.to_vec(), adj, pairs, local }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn energy(&self, s: &[f64]) -> f64 {
        let pair: f64 = self.pairs.iter().map(|&(i, k, j)| j * s[i] * s[k]).sum();
        let field: f64 = self.local.iter().zip(s).map(|(b, x)| b * x).sum();
        -pair - field
    }

    /// Visits every configuration in Gray-code order with its energy.
    fn walk(&self, mut visit: impl FnMut(&[f64], f64)) {
        let n = self.len();
        assert!(n <= 24, "oracle enumeration limited to 24 sites");
        let mut s = vec![-1.0; n];
        let mut e = self.energy(&s);
        visit(&s, e);
        for step in 1u64..(1u64 << n) {
            let i = step.trailing_zeros() as usize;
            let h: f64 = self.adj[i].iter().map(|&(k, j)| j * s[k]).sum::<f64>() + self.local[i];
            e += 2.0 * s[i] * h;
            s[i] = -s[i];
            visit(&s, e);
        }
    }

    /// Minimum energy (recomputed exactly), a minimizer, and the gap to the next configuration.
    pub fn ground_state(&self) -> (f64, Vec<f64>, f64) {
        let (mut best, mut second) = (f64::INFINITY, f64::INFINITY);
        let mut arg = Vec::new();
        self.walk(|s, e| {
            if e < best {
                second = best;
                best = e;
                arg = s.to_vec();
            } else if e < second {
                second = e;
            }
        });
        (self.energy(&arg), arg, second - best)
    }

    /// `log Z` at temperature `t` and the magnetizations.
    pub fn gibbs(&self, t: f64) -> (f64, Vec<f64>) {
        let (e0, _, _) = self.ground_state();
        let mut z = 0.0;
        let mut m = vec![0.0; self.len()];
        self.walk(|s, e| {
            let w = (-(e - e0) / t).exp();
            z += w;
            for (acc, x) in m.iter_mut().zip(s) {
                *acc += w * x;
            }
        });
        (z.ln() - e0 / t, m.into_iter().map(|x| x / z).collect())
    }

    pub fn log_partition(&self, t: f64) -> f64 {
        self.log_partition_clamped(t, &vec![None; self.len()])
    }

    /// `log` of the sum over configurations that agree with `clamp` where it is set.
    pub fn log_partition_clamped(&self, t: f64, clamp: &[Option<f64>]) -> f64 {
        let keep = |s: &[f64]| clamp.iter().zip(s).all(|(c, x)| c.is_none_or(|v| v == *x));
        let mut e0 = f64::INFINITY;
        self.walk(|s, e| {
            if keep(s) {
                e0 = e0.min(e);
            }
        });
        let mut z = 0.0;
        self.walk(|s, e| {
            if keep(s) {
                z += (-(e - e0) / t).exp();
            }
        });
        z.ln() - e0 / t
    }
}

/// `Lambda(3 ell) \ Lambda(ell)` with outer spin on sites beyond `3 ell` and
/// inner spin on sites within `ell`.
pub fn annulus_instance(
    ell: u32,
    coupling: &CouplingSpec,
    site_field: &dyn Fn(Site) -> f64,
    outer: f64,
    inner: f64,
) -> Instance {
    let r = 3 * ell as i32;
    let mut sites = Vec::new();
    for y in -r..=r {
        for x in -r..=r {
            let s = Site::new(x, y);
            let d = s.distance(Site::ORIGIN);
            if d > ell && d <= 3 * ell {
                sites.push(s);
            }
        }
    }
    let tau = move |v: Site| if v.distance(Site::ORIGIN) <= ell { inner } else { outer };
    Instance::new(&sites, coupling, site_field, &tau)
}
