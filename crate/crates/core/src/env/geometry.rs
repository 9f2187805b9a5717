use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub position: Position,
    /// Samples processed per second of local training.
    pub compute_rate: f64,
    pub num_samples: usize,
    pub fading_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    pub server_id: usize,
    pub position: Position,
    pub coverage_radius: f64,
    pub total_bandwidth: f64,
    pub subset_size: usize,
}

impl ServerProfile {
    pub fn covers(&self, p: &Position) -> bool {
        self.position.distance(p) <= self.coverage_radius
    }
}

/// Servers on a regular polygon with side `spacing` km (two servers sit on
/// the x axis, one server sits at the origin).
pub fn server_layout(num_servers: usize, spacing: f64) -> Vec<Position> {
    match num_servers {
        0 => Vec::new(),
        1 => vec![Position::new(0.0, 0.0)],
        2 => vec![Position::new(0.0, 0.0), Position::new(spacing, 0.0)],
        m => {
            let r = spacing / (2.0 * (std::f64::consts::PI / m as f64).sin());
            (0..m)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64 - std::f64::consts::FRAC_PI_2;
                    Position::new(r * a.cos(), r * a.sin())
                })
                .collect()
        }
    }
}

/// Client ids covered by each server, sorted ascending.
pub fn coverage_sets(clients: &[ClientProfile], servers: &[ServerProfile]) -> Vec<Vec<usize>> {
    servers
        .iter()
        .map(|s| {
            let mut ids: Vec<usize> = clients
                .iter()
                .filter(|c| s.covers(&c.position))
                .map(|c| c.client_id)
                .collect();
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Uniform placement in the bounding box of the coverage disks, with each
/// draw kept only while its region (covered / uncovered) still has room, so
/// exactly `covered` of the `total` clients end up inside some disk.
pub fn place_clients<R: Rng + ?Sized>(
    servers: &[ServerProfile],
    total: usize,
    covered: usize,
    rng: &mut R,
) -> Result<Vec<Position>> {
    if servers.is_empty() {
        return Err(Error::Config("at least one server is required".into()));
    }
    if covered > total {
        return Err(Error::Config(format!(
            "{covered} covered clients exceed {total} clients"
        )));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in servers {
        x0 = x0.min(s.position.x - s.coverage_radius);
        x1 = x1.max(s.position.x + s.coverage_radius);
        y0 = y0.min(s.position.y - s.coverage_radius);
        y1 = y1.max(s.position.y + s.coverage_radius);
    }
    // margin so the box has an uncovered region even for a single disk
    let margin = 0.25 * servers[0].coverage_radius;
    let (x0, x1, y0, y1) = (x0 - margin, x1 + margin, y0 - margin, y1 + margin);

    let mut out = Vec::with_capacity(total);
    let (mut n_in, mut n_out) = (0, 0);
    let mut attempts = 0usize;
    while out.len() < total {
        attempts += 1;
        if attempts > 1_000_000 {
            return Err(Error::Config("client placement did not converge".into()));
        }
        let p = Position::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
        let inside = servers.iter().any(|s| s.covers(&p));
        if inside && n_in < covered {
            n_in += 1;
            out.push(p);
        } else if !inside && n_out < total - covered {
            n_out += 1;
            out.push(p);
        }
    }
    Ok(out)
}
