//! Perovskite lattice geometry in projection: a square grid of B-site
//! columns with one A-site column inside every grid cell.
//!
//! Neighbor structure comes from grid indices, never from nearest-neighbor
//! searches, so moving sampled locations cannot change which B-sites an
//! A-site averages over.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SiteType {
    A,
    B,
}

impl fmt::Display for SiteType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SiteType::A => "A",
            SiteType::B => "B",
        })
    }
}

impl FromStr for SiteType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(SiteType::A),
            "B" | "b" => Ok(SiteType::B),
            other => Err(Error::Domain(format!("unknown site type `{other}`"))),
        }
    }
}

/// One atom column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomSite {
    /// Index within the sites of the same type.
    pub id: usize,
    pub site_type: SiteType,
    pub location: [f64; 2],
    pub intensity: f64,
}

/// Expected B-site grid plus the A-to-B neighbor map.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGeometry {
    n_b_per_side: usize,
    origin: [f64; 2],
    axes: [[f64; 2]; 2],
    b_means: Vec<[f64; 2]>,
    b_grid: Vec<[usize; 2]>,
    a_grid: Vec<[usize; 2]>,
    neighbors: Vec<[usize; 4]>,
    a_of_b: Vec<Vec<usize>>,
}

/// Square grid with `n_b_per_side^2` B-sites spaced `spacing` apart,
/// the first at `origin`.
pub fn build_geometry(n_b_per_side: usize, spacing: f64, origin: [f64; 2]) -> Result<LatticeGeometry> {
    if !(spacing > 0.0) {
        return Err(Error::Domain(format!("spacing must be positive, got {spacing}")));
    }
    LatticeGeometry::from_affine(n_b_per_side, origin, [[spacing, 0.0], [0.0, spacing]])
}

impl LatticeGeometry {
    /// Grid means `origin + gx * axes[0] + gy * axes[1]`.
    pub fn from_affine(n_b_per_side: usize, origin: [f64; 2], axes: [[f64; 2]; 2]) -> Result<Self> {
        let n = n_b_per_side;
        if n < 2 {
            return Err(Error::Domain(format!("need at least 2 B-sites per side, got {n}")));
        }
        let mut b_means = Vec::with_capacity(n * n);
        let mut b_grid = Vec::with_capacity(n * n);
        for gy in 0..n {
            for gx in 0..n {
                b_grid.push([gx, gy]);
                b_means.push([
                    origin[0] + gx as f64 * axes[0][0] + gy as f64 * axes[1][0],
                    origin[1] + gx as f64 * axes[0][1] + gy as f64 * axes[1][1],
                ]);
            }
        }
        let m = n - 1;
        let mut a_grid = Vec::with_capacity(m * m);
        let mut neighbors = Vec::with_capacity(m * m);
        let mut a_of_b = vec![Vec::new(); n * n];
        for gy in 0..m {
            for gx in 0..m {
                let a_id = a_grid.len();
                a_grid.push([gx, gy]);
                let nb = [
                    gy * n + gx,
                    gy * n + gx + 1,
                    (gy + 1) * n + gx,
                    (gy + 1) * n + gx + 1,
                ];
                for &b in &nb {
                    a_of_b[b].push(a_id);
                }
                neighbors.push(nb);
            }
        }
        Ok(LatticeGeometry {
            n_b_per_side: n,
            origin,
            axes,
            b_means,
            b_grid,
            a_grid,
            neighbors,
            a_of_b,
        })
    }

    /// Expected grid from detected B-site locations keyed by grid index: the
    /// lattice vectors come from a least-squares affine fit to every B-site and
    /// the grid is then anchored on the four corner sites.
    pub fn fit_to_b_sites(n_b_per_side: usize, b_sites: &[([usize; 2], [f64; 2])]) -> Result<Self> {
        let n = n_b_per_side;
        if b_sites.len() != n * n {
            return Err(Error::Structure(format!(
                "expected {} B-sites for a {n}x{n} grid, got {}",
                n * n,
                b_sites.len()
            )));
        }
        // Normal equations for coordinate = o + gx * a + gy * b, per axis.
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [[0.0f64; 3]; 2];
        for &(g, loc) in b_sites {
            if g[0] >= n || g[1] >= n {
                return Err(Error::Structure(format!("grid index {g:?} outside {n}x{n}")));
            }
            let row = [1.0, g[0] as f64, g[1] as f64];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[0][i] += row[i] * loc[0];
                atb[1][i] += row[i] * loc[1];
            }
        }
        let solve = |rhs: [f64; 3]| -> Result<[f64; 3]> {
            let m = crate::covariance::DenseMatrix::from_row_major(
                3,
                ata.iter().flatten().copied().collect(),
            )?;
            let f = crate::covariance::factorize(&m)?;
            let x = f.solve(&rhs)?;
            Ok([x[0], x[1], x[2]])
        };
        let cx = solve(atb[0])?;
        let cy = solve(atb[1])?;
        let axes = [[cx[1], cy[1]], [cx[2], cy[2]]];
        let mut origin = [cx[0], cy[0]];
        let corners = [[0, 0], [n - 1, 0], [0, n - 1], [n - 1, n - 1]];
        let mut shift = [0.0; 2];
        for c in corners {
            let (_, loc) = b_sites
                .iter()
                .find(|(g, _)| *g == c)
                .ok_or_else(|| Error::Structure(format!("missing corner B-site {c:?}")))?;
            let fitted = [
                origin[0] + c[0] as f64 * axes[0][0] + c[1] as f64 * axes[1][0],
                origin[1] + c[0] as f64 * axes[0][1] + c[1] as f64 * axes[1][1],
            ];
            shift[0] += (loc[0] - fitted[0]) / 4.0;
            shift[1] += (loc[1] - fitted[1]) / 4.0;
        }
        origin[0] += shift[0];
        origin[1] += shift[1];
        Self::from_affine(n, origin, axes)
    }

    pub fn n_b_per_side(&self) -> usize {
        self.n_b_per_side
    }

    pub fn n_b(&self) -> usize {
        self.b_means.len()
    }

    pub fn n_a(&self) -> usize {
        self.neighbors.len()
    }

    /// Mean lattice spacing.
    pub fn spacing(&self) -> f64 {
        let len = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        0.5 * (len(self.axes[0]) + len(self.axes[1]))
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// Expected B-site locations.
    pub fn b_grid_means(&self) -> &[[f64; 2]] {
        &self.b_means
    }

    pub fn b_grid_index(&self, b: usize) -> [usize; 2] {
        self.b_grid[b]
    }

    pub fn a_grid_index(&self, a: usize) -> [usize; 2] {
        self.a_grid[a]
    }

    /// B-site ids around A-site `a`.
    pub fn neighbors(&self, a: usize) -> [usize; 4] {
        self.neighbors[a]
    }

    /// A-site ids that use B-site `b` as a neighbor.
    pub fn a_sites_of_b(&self, b: usize) -> &[usize] {
        &self.a_of_b[b]
    }

    /// Unweighted centers of the expected B grid, one per A-site.
    pub fn a_grid_means(&self) -> Vec<[f64; 2]> {
        (0..self.n_a())
            .map(|a| unweighted_center(&self.neighbor_locations(a, &self.b_means)))
            .collect()
    }

    /// Locations of A-site `a`'s neighbors taken from `b_locations`.
    #[inline]
    pub fn neighbor_locations(&self, a: usize, b_locations: &[[f64; 2]]) -> [[f64; 2]; 4] {
        self.neighbors[a].map(|b| b_locations[b])
    }

    #[inline]
    pub fn neighbor_values(&self, a: usize, values: &[f64]) -> [f64; 4] {
        self.neighbors[a].map(|b| values[b])
    }

    /// Geometry CSV: `site_id,type,grid_x,grid_y,mean_x,mean_y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("site_id,type,grid_x,grid_y,mean_x,mean_y\n");
        for (b, (g, m)) in self.b_grid.iter().zip(&self.b_means).enumerate() {
            out.push_str(&format!("{b},B,{},{},{},{}\n", g[0], g[1], m[0], m[1]));
        }
        for (a, (g, m)) in self.a_grid.iter().zip(self.a_grid_means()).enumerate() {
            out.push_str(&format!("{a},A,{},{},{},{}\n", g[0], g[1], m[0], m[1]));
        }
        out
    }

    /// Neighbor edge list CSV: `a_site_id,b_site_id`.
    pub fn neighbors_csv(&self) -> String {
        let mut out = String::from("a_site_id,b_site_id\n");
        for (a, nb) in self.neighbors.iter().enumerate() {
            for b in nb {
                out.push_str(&format!("{a},{b}\n"));
            }
        }
        out
    }
}

/// Arithmetic mean of the four neighbor locations.
#[inline]
pub fn unweighted_center(b_locations: &[[f64; 2]; 4]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for l in b_locations {
        c[0] += l[0];
        c[1] += l[1];
    }
    [c[0] / 4.0, c[1] / 4.0]
}

/// Intensity-weighted mean of the four neighbor locations.
pub fn weighted_center(b_locations: &[[f64; 2]; 4], betas: &[f64; 4]) -> Result<[f64; 2]> {
    let total: f64 = betas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain(format!(
            "weighted center needs positive total weight, got {total}"
        )));
    }
    Ok(weighted_center_unchecked(b_locations, betas, total))
}

#[inline]
pub(crate) fn weighted_center_unchecked(b_locations: &[[f64; 2]; 4], betas: &[f64; 4], total: f64) -> [f64; 2] {
    let mut c = [0.0; 2];
    for (l, b) in b_locations.iter().zip(betas) {
        c[0] += b * l[0];
        c[1] += b * l[1];
    }
    [c[0] / total, c[1] / total]
}

/// One row of a sites CSV: an approximate column location with its grid index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteRecord {
    pub id: usize,
    pub site_type: SiteType,
    pub grid: [usize; 2],
    pub location: [f64; 2],
}

/// Reads `site_id,type,grid_x,grid_y,x,y` rows. The location columns may also
/// be named `mean_x,mean_y`, so a geometry CSV can be used as a sites file.
pub fn read_sites_csv(path: impl AsRef<Path>) -> Result<Vec<SiteRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sites_csv(&text)
}

pub fn parse_sites_csv(text: &str) -> Result<Vec<SiteRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        column: 1,
        message: "empty sites file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |names: &[&str]| -> Result<usize> {
        cols.iter()
            .position(|c| names.contains(c))
            .ok_or_else(|| Error::Parse {
                line: 1,
                column: 1,
                message: format!("sites header lacks column {}", names[0]),
            })
    };
    let idx = [
        find(&["site_id"])?,
        find(&["type"])?,
        find(&["grid_x"])?,
        find(&["grid_y"])?,
        find(&["x", "mean_x", "x0"])?,
        find(&["y", "mean_y", "y0"])?,
    ];
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let field = |k: usize| -> Result<&str> {
            fields.get(idx[k]).copied().ok_or(Error::Parse {
                line: lineno + 1,
                column: idx[k] + 1,
                message: "missing field".into(),
            })
        };
        let bad = |k: usize, what: &str| Error::Parse {
            line: lineno + 1,
            column: idx[k] + 1,
            message: format!("invalid {what}"),
        };
        out.push(SiteRecord {
            id: field(0)?.parse().map_err(|_| bad(0, "site_id"))?,
            site_type: field(1)?.parse().map_err(|_| bad(1, "type"))?,
            grid: [
                field(2)?.parse().map_err(|_| bad(2, "grid_x"))?,
                field(3)?.parse().map_err(|_| bad(3, "grid_y"))?,
            ],
            location: [
                field(4)?.parse().map_err(|_| bad(4, "x"))?,
                field(5)?.parse().map_err(|_| bad(5, "y"))?,
            ],
        });
    }
    Ok(out)
}

/// Orders site records into grid-indexed B and A lists matching the ids of a
/// full `n x n` geometry. Returns `(n, b_records, a_records)`.
pub fn arrange_sites(records: &[SiteRecord]) -> Result<(usize, Vec<SiteRecord>, Vec<SiteRecord>)> {
    let n = records
        .iter()
        .filter(|r| r.site_type == SiteType::B)
        .map(|r| r.grid[0].max(r.grid[1]) + 1)
        .max()
        .ok_or_else(|| Error::Structure("no B-sites in sites file".into()))?;
    let mut b: Vec<Option<SiteRecord>> = vec![None; n * n];
    let mut a: Vec<Option<SiteRecord>> = vec![None; (n - 1) * (n - 1)];
    for r in records {
        let (slot, side) = match r.site_type {
            SiteType::B => (&mut b, n),
            SiteType::A => (&mut a, n - 1),
        };
        if r.grid[0] >= side || r.grid[1] >= side {
            return Err(Error::Structure(format!(
                "{} site {} has grid index {:?} outside the {side}x{side} grid",
                r.site_type, r.id, r.grid
            )));
        }
        let k = r.grid[1] * side + r.grid[0];
        if slot[k].replace(*r).is_some() {
            return Err(Error::Structure(format!(
                "duplicate {} site at grid {:?}",
                r.site_type, r.grid
            )));
        }
    }
    let collect = |v: Vec<Option<SiteRecord>>, t: SiteType| -> Result<Vec<SiteRecord>> {
        v.into_iter()
            .enumerate()
            .map(|(k, r)| r.ok_or_else(|| Error::Structure(format!("missing {t} site with grid slot {k}"))))
            .collect()
    };
    Ok((n, collect(b, SiteType::B)?, collect(a, SiteType::A)?))
}
