//! Bounded domains: balls, annuli and boxes with exact signed distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(x: &[f64], c: &[f64]) -> Vec<f64> {
    x.iter().zip(c).map(|(a, b)| a - b).collect()
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::domain("ball radius must be positive"));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn unit_ball(n: usize) -> Self {
        Domain::Ball {
            center: vec![0.0; n],
            radius: 1.0,
        }
    }

    pub fn annulus(center: Vec<f64>, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && inner < outer) {
            return Err(Error::domain("annulus radii must satisfy 0 < inner < outer"));
        }
        Ok(Domain::Annulus {
            center,
            inner,
            outer,
        })
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::domain("box corners must satisfy lo < hi componentwise"));
        }
        Ok(Domain::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } => radius - norm(&diff(x, center)),
            Domain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = norm(&diff(x, center));
                (r - inner).min(outer - r)
            }
            Domain::Box { lo, hi } => {
                let mut inside = f64::INFINITY;
                let mut outside = 0.0f64;
                let mut any_out = false;
                for i in 0..lo.len() {
                    let d = (x[i] - lo[i]).min(hi[i] - x[i]);
                    inside = inside.min(d);
                    if d < 0.0 {
                        any_out = true;
                        outside += d * d;
                    }
                }
                if any_out {
                    -outside.sqrt()
                } else {
                    inside
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boundary_distance(x) > 0.0
    }

    /// Radius of the largest inscribed ball.
    pub fn inradius(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => *radius,
            Domain::Annulus { inner, outer, .. } => 0.5 * (outer - inner),
            Domain::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| 0.5 * (b - a))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::Annulus { outer, .. } => 2.0 * outer,
            Domain::Box { lo, hi } => norm(&diff(hi, lo)),
        }
    }

    /// Lattice anchor: the center for balls and annuli, the low corner for boxes.
    pub fn anchor(&self) -> Vec<f64> {
        match self {
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.clone(),
            Domain::Box { lo, .. } => lo.clone(),
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Domain::Annulus { center, outer, .. } => (
                center.iter().map(|c| c - outer).collect(),
                center.iter().map(|c| c + outer).collect(),
            ),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// Distance from interior `x` to the boundary along `sign · e_axis`.
    pub fn axis_crossing(&self, x: &[f64], axis: usize, sign: f64) -> f64 {
        let sphere_exit = |c: &[f64], r: f64| {
            let d = diff(x, c);
            let b = sign * d[axis];
            let c2 = d.iter().map(|v| v * v).sum::<f64>() - r * r;
            -b + (b * b - c2).max(0.0).sqrt()
        };
        match self {
            Domain::Ball { center, radius } => sphere_exit(center, *radius),
            Domain::Annulus {
                center,
                inner,
                outer,
            } => {
                let t_out = sphere_exit(center, *outer);
                let d = diff(x, center);
                let b = sign * d[axis];
                let c2 = d.iter().map(|v| v * v).sum::<f64>() - inner * inner;
                let disc = b * b - c2;
                if b < 0.0 && disc >= 0.0 {
                    let t_in = -b - disc.sqrt();
                    if t_in > 0.0 {
                        return t_in.min(t_out);
                    }
                }
                t_out
            }
            Domain::Box { lo, hi } => {
                if sign > 0.0 {
                    hi[axis] - x[axis]
                } else {
                    x[axis] - lo[axis]
                }
            }
        }
    }

    /// Nearest boundary point to `x`.
    pub fn closest_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        let radial = |c: &[f64], r: f64| {
            let d = diff(x, c);
            let len = norm(&d);
            if len == 0.0 {
                let mut p = c.to_vec();
                p[0] += r;
                return p;
            }
            c.iter().zip(&d).map(|(ci, di)| ci + r * di / len).collect::<Vec<_>>()
        };
        match self {
            Domain::Ball { center, radius } => radial(center, *radius),
            Domain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = norm(&diff(x, center));
                if (r - inner).abs() < (outer - r).abs() {
                    radial(center, *inner)
                } else {
                    radial(center, *outer)
                }
            }
            Domain::Box { lo, hi } => {
                let mut p: Vec<f64> = x.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect();
                if self.boundary_distance(x) > 0.0 {
                    let mut best = (f64::INFINITY, 0, 0.0);
                    for i in 0..lo.len() {
                        if x[i] - lo[i] < best.0 {
                            best = (x[i] - lo[i], i, lo[i]);
                        }
                        if hi[i] - x[i] < best.0 {
                            best = (hi[i] - x[i], i, hi[i]);
                        }
                    }
                    p[best.1] = best.2;
                }
                p
            }
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            Domain::Ball { center, radius } => write!(f, "ball:{},{}", join(center), radius),
            Domain::Annulus {
                center,
                inner,
                outer,
            } => write!(f, "annulus:{},{},{}", join(center), inner, outer),
            Domain::Box { lo, hi } => write!(f, "box:{},{}", join(lo), join(hi)),
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    /// Three-dimensional specs: `ball:R`, `ball:cx,cy,cz,R`, `annulus:r_in,r_out`,
    /// `annulus:cx,cy,cz,r_in,r_out`, `box:lo,hi` (a cube) or `box:x0,y0,z0,x1,y1,z1`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::domain(format!("domain spec '{s}' lacks a ':'")))?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::domain(format!("bad number in domain spec '{s}': {e}")))?;
        match (kind.trim(), nums.len()) {
            ("ball", 1) => Domain::ball(vec![0.0; 3], nums[0]),
            ("ball", 4) => Domain::ball(nums[..3].to_vec(), nums[3]),
            ("annulus", 2) => Domain::annulus(vec![0.0; 3], nums[0], nums[1]),
            ("annulus", 5) => Domain::annulus(nums[..3].to_vec(), nums[3], nums[4]),
            ("box", 2) => Domain::cuboid(vec![nums[0]; 3], vec![nums[1]; 3]),
            ("box", 6) => Domain::cuboid(nums[..3].to_vec(), nums[3..].to_vec()),
            _ => Err(Error::domain(format!("unrecognized domain spec '{s}'"))),
        }
    }
}
