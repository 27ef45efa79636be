//! Geometry of the square lattice: sites, graph-distance balls, annuli,
//! boxes, and translation-invariant finite-range couplings.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vertex of the square lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const ORIGIN: Site = Site { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    /// Graph (L1) distance.
    pub fn distance(self, other: Site) -> u32 {
        (self.x - other.x).unsigned_abs() + (self.y - other.y).unsigned_abs()
    }

    pub fn offset(self, dx: i32, dy: i32) -> Site {
        Site::new(self.x + dx, self.y + dy)
    }

    /// The four unit neighbours, in the order +x, -x, +y, -y.
    pub fn unit_neighbors(self) -> [Site; 4] {
        [
            self.offset(1, 0),
            self.offset(-1, 0),
            self.offset(0, 1),
            self.offset(0, -1),
        ]
    }
}

// Row-major: by y, then by x.
impl Ord for Site {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Site {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Translation-invariant pair couplings `J(dx, dy)` of finite range.
///
/// Only nonzero entries are stored. Values are symmetric under
/// `(dx, dy) -> (-dx, -dy)`. Negative entries are representable so that the
/// solvers can reject them with a precise error; every observable in this
/// crate requires a ferromagnetic spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    offsets: Vec<(i32, i32, f64)>,
}

impl CouplingSpec {
    /// `J_{u,v} = J` for unit displacements, zero otherwise.
    pub fn nearest_neighbor(j: f64) -> Result<Self> {
        Self::from_offsets([(1, 0, j), (-1, 0, j), (0, 1, j), (0, -1, j)])
    }

    pub fn from_offsets<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (i32, i32, f64)>,
    {
        let mut offsets: Vec<(i32, i32, f64)> = Vec::new();
        for (dx, dy, j) in entries {
            if !j.is_finite() {
                return Err(Error::domain(format!("coupling J({dx},{dy}) is not finite")));
            }
            if dx == 0 && dy == 0 {
                return Err(Error::domain("self-coupling J(0,0) is not allowed"));
            }
            if j == 0.0 {
                continue;
            }
            if let Some(existing) = offsets.iter().find(|o| o.0 == dx && o.1 == dy) {
                if existing.2 != j {
                    return Err(Error::domain(format!(
                        "conflicting values for coupling J({dx},{dy})"
                    )));
                }
                continue;
            }
            offsets.push((dx, dy, j));
        }
        for &(dx, dy, j) in &offsets {
            let mirrored = offsets
                .iter()
                .find(|o| o.0 == -dx && o.1 == -dy)
                .map(|o| o.2);
            if mirrored != Some(j) {
                return Err(Error::domain(format!(
                    "coupling is not symmetric: J({dx},{dy}) = {j} but J({},{}) = {}",
                    -dx,
                    -dy,
                    mirrored.unwrap_or(0.0)
                )));
            }
        }
        offsets.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        Ok(CouplingSpec { offsets })
    }

    /// Nonzero couplings as `(dx, dy, J)`, sorted row-major by displacement.
    pub fn offsets(&self) -> &[(i32, i32, f64)] {
        &self.offsets
    }

    pub fn strength(&self, dx: i32, dy: i32) -> f64 {
        self.offsets
            .iter()
            .find(|o| o.0 == dx && o.1 == dy)
            .map_or(0.0, |o| o.2)
    }

    /// `R(J)`: largest graph distance carrying a nonzero coupling.
    pub fn range(&self) -> u32 {
        self.offsets
            .iter()
            .map(|&(dx, dy, _)| dx.unsigned_abs() + dy.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    /// `sum_v J_{0,v}`: the field magnitude beyond which a spin is forced.
    pub fn total_strength(&self) -> f64 {
        self.offsets.iter().map(|o| o.2).sum()
    }

    pub fn is_ferromagnetic(&self) -> bool {
        self.offsets.iter().all(|o| o.2 >= 0.0)
    }

    /// `Some(J)` when this is exactly the nearest-neighbour coupling.
    pub fn nearest_neighbor_strength(&self) -> Option<f64> {
        if self.offsets.len() != 4 {
            return None;
        }
        let j = self.offsets[0].2;
        let unit = self
            .offsets
            .iter()
            .all(|&(dx, dy, v)| dx.abs() + dy.abs() == 1 && v == j);
        unit.then_some(j)
    }

    pub(crate) fn require_ferromagnetic(&self) -> Result<()> {
        match self.offsets.iter().find(|o| o.2 < 0.0) {
            Some(&(dx, dy, j)) => Err(Error::UnsupportedModel(format!(
                "negative coupling J({dx},{dy}) = {j}; only ferromagnetic models are solvable"
            ))),
            None => Ok(()),
        }
    }
}

/// How a region was built. Serialized into result metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    Ball { center: Site, radius: u32 },
    Annulus { ell: u32 },
    Box { origin: Site, width: u32, height: u32 },
    Custom,
}

/// Dense lookup table over the bounding box.
#[derive(Clone, Debug)]
struct SiteIndex {
    min_x: i32,
    min_y: i32,
    width: usize,
    height: usize,
    slots: Vec<u32>,
}

const NO_SITE: u32 = u32::MAX;

impl SiteIndex {
    fn build(sites: &[Site]) -> Self {
        if sites.is_empty() {
            return SiteIndex { min_x: 0, min_y: 0, width: 0, height: 0, slots: Vec::new() };
        }
        let min_x = sites.iter().map(|s| s.x).min().unwrap();
        let max_x = sites.iter().map(|s| s.x).max().unwrap();
        let min_y = sites.iter().map(|s| s.y).min().unwrap();
        let max_y = sites.iter().map(|s| s.y).max().unwrap();
        let width = (max_x - min_x + 1) as usize;
        let height = (max_y - min_y + 1) as usize;
        let mut slots = vec![NO_SITE; width * height];
        for (i, s) in sites.iter().enumerate() {
            slots[(s.y - min_y) as usize * width + (s.x - min_x) as usize] = i as u32;
        }
        SiteIndex { min_x, min_y, width, height, slots }
    }

    fn get(&self, s: Site) -> Option<usize> {
        let dx = s.x - self.min_x;
        let dy = s.y - self.min_y;
        if dx < 0 || dy < 0 || dx as usize >= self.width || dy as usize >= self.height {
            return None;
        }
        match self.slots[dy as usize * self.width + dx as usize] {
            NO_SITE => None,
            i => Some(i as usize),
        }
    }
}

/// A finite set of sites in row-major order with a dense index map.
#[derive(Clone, Debug)]
pub struct Region {
    kind: RegionKind,
    sites: Vec<Site>,
    index: SiteIndex,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.sites == other.sites
    }
}

impl Region {
    fn from_sorted(kind: RegionKind, sites: Vec<Site>) -> Self {
        let index = SiteIndex::build(&sites);
        Region { kind, sites, index }
    }

    /// Arbitrary site set; duplicates are removed.
    pub fn custom<I: IntoIterator<Item = Site>>(sites: I) -> Self {
        let set: BTreeSet<Site> = sites.into_iter().collect();
        Self::from_sorted(RegionKind::Custom, set.into_iter().collect())
    }

    /// `{v : d(center, v) <= radius}`.
    pub fn ball(center: Site, radius: u32) -> Self {
        let r = radius as i32;
        let mut sites = Vec::with_capacity(1 + 2 * radius as usize * (radius as usize + 1));
        for dy in -r..=r {
            let span = r - dy.abs();
            for dx in -span..=span {
                sites.push(center.offset(dx, dy));
            }
        }
        Self::from_sorted(RegionKind::Ball { center, radius }, sites)
    }

    /// `Lambda(3 ell) \ Lambda(ell)` around the origin.
    pub fn annulus(ell: u32) -> Result<Self> {
        if ell == 0 {
            return Err(Error::domain("annulus requires ell >= 1"));
        }
        let outer = 3 * ell;
        let sites = Region::ball(Site::ORIGIN, outer)
            .sites
            .into_iter()
            .filter(|s| s.distance(Site::ORIGIN) > ell)
            .collect();
        Ok(Self::from_sorted(RegionKind::Annulus { ell }, sites))
    }

    /// Axis-aligned box `[x0, x0 + width) x [y0, y0 + height)`.
    pub fn rect(origin: Site, width: u32, height: u32) -> Self {
        let mut sites = Vec::with_capacity(width as usize * height as usize);
        for dy in 0..height as i32 {
            for dx in 0..width as i32 {
                sites.push(origin.offset(dx, dy));
            }
        }
        Self::from_sorted(RegionKind::Box { origin, width, height }, sites)
    }

    pub fn square(origin: Site, side: u32) -> Self {
        Self::rect(origin, side, side)
    }

    pub fn kind(&self) -> &RegionKind {
        &self.kind
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.index.get(s)
    }

    pub fn contains(&self, s: Site) -> bool {
        self.index.get(s).is_some()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.sites.iter().all(|&s| other.contains(s))
    }

    /// Sites of `self` not in `other`.
    pub fn difference(&self, other: &Region) -> Region {
        Region::custom(self.sites.iter().copied().filter(|&s| !other.contains(s)))
    }

    pub fn filter<F: Fn(Site) -> bool>(&self, keep: F) -> Region {
        Region::custom(self.sites.iter().copied().filter(|&s| keep(s)))
    }

    /// `d_e`: ordered pairs `(u, v)` with `u` inside, `v` outside, `J_{u,v} != 0`.
    /// Sorted by `u` then by coupling offset.
    pub fn edge_boundary(&self, coupling: &CouplingSpec) -> Vec<(Site, Site)> {
        let mut edges = Vec::new();
        for &u in &self.sites {
            for &(dx, dy, _) in coupling.offsets() {
                let v = u.offset(dx, dy);
                if !self.contains(v) {
                    edges.push((u, v));
                }
            }
        }
        edges
    }

    /// `d_v`: outside sites coupled to some inside site, row-major.
    pub fn vertex_boundary(&self, coupling: &CouplingSpec) -> Vec<Site> {
        let set: BTreeSet<Site> = self
            .edge_boundary(coupling)
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        set.into_iter().collect()
    }
}

/// Split of the annulus vertex boundary into the part outside `Lambda(3 ell)`
/// and the part inside `Lambda(ell)`.
#[derive(Clone, Debug)]
pub struct AnnulusBoundary {
    pub outer: Vec<Site>,
    pub inner: Vec<Site>,
}

pub fn annulus_boundary(ell: u32, coupling: &CouplingSpec) -> Result<AnnulusBoundary> {
    let annulus = Region::annulus(ell)?;
    let core = Region::ball(Site::ORIGIN, ell);
    let (inner, outer): (Vec<Site>, Vec<Site>) = annulus
        .vertex_boundary(coupling)
        .into_iter()
        .partition(|&s| core.contains(s));
    Ok(AnnulusBoundary { outer, inner })
}

/// Precomputed solver adjacency for a region under a coupling spec.
///
/// `neighbors[i]` lists internal partners `(j, J_ij)` in both directions;
/// `boundary[i]` lists `(k, J)` into `boundary_sites[k]`, the vertex boundary.
#[derive(Clone, Debug)]
pub struct RegionGraph {
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub boundary: Vec<Vec<(usize, f64)>>,
    pub boundary_sites: Vec<Site>,
}

impl RegionGraph {
    pub fn new(region: &Region, coupling: &CouplingSpec) -> Self {
        let boundary_sites = region.vertex_boundary(coupling);
        let boundary_index = Region::custom(boundary_sites.iter().copied());
        let n = region.len();
        let mut neighbors = vec![Vec::new(); n];
        let mut boundary = vec![Vec::new(); n];
        for (i, &u) in region.sites().iter().enumerate() {
            for &(dx, dy, j) in coupling.offsets() {
                let v = u.offset(dx, dy);
                match region.index_of(v) {
                    Some(k) => neighbors[i].push((k, j)),
                    None => {
                        let k = boundary_index.index_of(v).expect("vertex boundary is complete");
                        boundary[i].push((k, j));
                    }
                }
            }
        }
        RegionGraph { neighbors, boundary, boundary_sites }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Internal unordered pairs `(i, j, J)` with `i < j`.
    pub fn internal_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&(j, _)| i < j).map(move |&(j, w)| (i, j, w)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn() -> CouplingSpec {
        CouplingSpec::nearest_neighbor(1.0).unwrap()
    }

    #[test]
    fn ball_sizes_match_closed_form() {
        for l in 0..=64u32 {
            let b = Region::ball(Site::ORIGIN, l);
            assert_eq!(b.len() as u32, 1 + 2 * l * (l + 1));
            assert!(b.sites().iter().all(|s| s.distance(Site::ORIGIN) <= l));
        }
        assert_eq!(Region::ball(Site::ORIGIN, 0).sites(), &[Site::ORIGIN]);
    }

    #[test]
    fn nearest_neighbor_vertex_boundary_sizes() {
        for r in 0..=64u32 {
            let b = Region::ball(Site::ORIGIN, r);
            assert_eq!(b.vertex_boundary(&nn()).len() as u32, 4 * (r + 1));
        }
        let single = Region::ball(Site::ORIGIN, 0).vertex_boundary(&nn());
        let mut expected = Site::ORIGIN.unit_neighbors().to_vec();
        expected.sort();
        assert_eq!(single, expected);
    }

    #[test]
    fn edge_boundary_of_cross_by_enumeration() {
        let cross = Region::ball(Site::ORIGIN, 1);
        assert_eq!(Region::ball(Site::ORIGIN, 0).edge_boundary(&nn()).len(), 4);
        // Brute force: every ordered (inside, outside) unit pair.
        let mut count = 0;
        for &u in cross.sites() {
            for v in u.unit_neighbors() {
                if !cross.contains(v) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 12);
        assert_eq!(cross.edge_boundary(&nn()).len(), 12);
    }

    #[test]
    fn range_two_edge_boundary_matches_offset_scan() {
        let mut entries = Vec::new();
        for dx in -2i32..=2 {
            for dy in -2i32..=2 {
                let d = dx.abs() + dy.abs();
                if d >= 1 && d <= 2 {
                    entries.push((dx, dy, if d == 1 { 1.0 } else { 0.25 }));
                }
            }
        }
        let c = CouplingSpec::from_offsets(entries).unwrap();
        assert_eq!(c.range(), 2);
        let ball = Region::ball(Site::ORIGIN, 2);
        let mut brute = 0;
        for &u in ball.sites() {
            for dx in -2i32..=2 {
                for dy in -2i32..=2 {
                    let d = dx.abs() + dy.abs();
                    if (1..=2).contains(&d) && !ball.contains(u.offset(dx, dy)) {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(ball.edge_boundary(&c).len(), brute);
    }

    #[test]
    fn edge_and_vertex_boundaries_consistent() {
        let c = CouplingSpec::from_offsets([(1, 1, 0.5), (-1, -1, 0.5), (2, 0, 1.0), (-2, 0, 1.0)]).unwrap();
        for region in [Region::ball(Site::new(3, -1), 3), Region::annulus(2).unwrap(), Region::rect(Site::new(0, 0), 4, 3)] {
            let vb = Region::custom(region.vertex_boundary(&c));
            for (u, v) in region.edge_boundary(&c) {
                assert!(region.contains(u));
                assert!(!region.contains(v));
                assert!(vb.contains(v));
            }
        }
    }

    #[test]
    fn annulus_geometry() {
        let a = Region::annulus(1).unwrap();
        assert_eq!(a.len(), 20);
        let core = Region::ball(Site::ORIGIN, 1);
        assert!(a.sites().iter().all(|&s| !core.contains(s)));
        for ell in 1..6u32 {
            let a = Region::annulus(ell).unwrap();
            let outer = 3 * ell as usize;
            let l = ell as usize;
            assert_eq!(a.len(), 2 * outer * (outer + 1) - 2 * l * (l + 1));
            let split = annulus_boundary(ell, &nn()).unwrap();
            assert!(split.outer.iter().all(|s| s.distance(Site::ORIGIN) == 3 * ell + 1));
            assert!(split.inner.iter().all(|s| s.distance(Site::ORIGIN) == ell));
            assert_eq!(split.outer.len() as u32, 4 * (3 * ell + 1));
            assert_eq!(split.inner.len() as u32, 4 * ell);
        }
        assert!(Region::annulus(0).is_err());
    }

    #[test]
    fn row_major_order_and_index() {
        let b = Region::ball(Site::new(2, 5), 3);
        let sites = b.sites();
        for w in sites.windows(2) {
            assert!((w[0].y, w[0].x) < (w[1].y, w[1].x));
        }
        for (i, &s) in sites.iter().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
        }
        assert_eq!(b.index_of(Site::new(100, 100)), None);
    }

    #[test]
    fn coupling_validation() {
        assert!(CouplingSpec::from_offsets([(1, 0, 1.0)]).is_err());
        assert!(CouplingSpec::from_offsets([(0, 0, 1.0)]).is_err());
        assert!(CouplingSpec::from_offsets([(1, 0, f64::NAN), (-1, 0, f64::NAN)]).is_err());
        let nn = nn();
        assert_eq!(nn.nearest_neighbor_strength(), Some(1.0));
        assert_eq!(nn.total_strength(), 4.0);
        assert_eq!(nn.range(), 1);
        let zero = CouplingSpec::nearest_neighbor(0.0).unwrap();
        assert!(zero.offsets().is_empty());
        assert_eq!(zero.range(), 0);
        let neg = CouplingSpec::from_offsets([(1, 0, -1.0), (-1, 0, -1.0)]).unwrap();
        assert!(!neg.is_ferromagnetic());
        assert!(neg.require_ferromagnetic().is_err());
    }

    #[test]
    fn region_graph_matches_edges() {
        let r = Region::annulus(1).unwrap();
        let g = RegionGraph::new(&r, &nn());
        let internal = g.internal_edges().count();
        let boundary: usize = g.boundary.iter().map(Vec::len).sum();
        assert_eq!(boundary, r.edge_boundary(&nn()).len());
        // every site has 4 couplings in total
        assert_eq!(2 * internal + boundary, 4 * r.len());
    }
}
