//! Plot-ready output files: CSV fields and trajectories with exact
//! round-trip decimal formatting, JSON reports with sorted keys. Every file
//! carries the config hash and seed.

use causalqm::grid::GridSpec;
use causalqm::trajectories::TrajectoryEnsemble;
use ndarray::ArrayD;
use std::io::Write;
use std::path::Path;

pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
}

impl Provenance {
    fn comment(&self) -> String {
        format!("# config_hash={:016x} seed={}\n", self.config_hash, self.seed)
    }

    pub fn json_fields(&self) -> serde_json::Value {
        serde_json::json!({
            "config_hash": format!("{:016x}", self.config_hash),
            "seed": self.seed,
        })
    }
}

/// Rust's default float display is the shortest representation that parses
/// back to the same IEEE-754 value, which keeps the files bit-reproducible.
pub fn write_field_csv(
    path: &Path,
    grid: &GridSpec,
    field: &ArrayD<f64>,
    prov: &Provenance,
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&prov.comment());
    match grid.ndim() {
        1 => {
            out.push_str("x1,value\n");
            for i in 0..grid.axes[0].len {
                out.push_str(&format!("{},{}\n", grid.axes[0].point(i), field[[i]]));
            }
        }
        2 => {
            out.push_str("x1,x2,value\n");
            for i in 0..grid.axes[0].len {
                let x1 = grid.axes[0].point(i);
                for j in 0..grid.axes[1].len {
                    out.push_str(&format!(
                        "{},{},{}\n",
                        x1,
                        grid.axes[1].point(j),
                        field[[i, j]]
                    ));
                }
            }
        }
        _ => unreachable!(),
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_trajectories_csv(
    path: &Path,
    ensemble: &TrajectoryEnsemble,
    prov: &Provenance,
) -> std::io::Result<()> {
    let ndim = ensemble.positions[0].shape()[1];
    let with_momenta = !ensemble.momenta.is_empty();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(prov.comment().as_bytes())?;
    let mut header = String::from("particle,t");
    for d in 0..ndim {
        header.push_str(&format!(",x{}", d + 1));
    }
    if with_momenta {
        for d in 0..ndim {
            header.push_str(&format!(",p{}", d + 1));
        }
    }
    header.push_str(",escaped\n");
    out.write_all(header.as_bytes())?;
    let mut row = String::new();
    for p in 0..ensemble.n_particles() {
        for (k, &t) in ensemble.times.iter().enumerate() {
            row.clear();
            row.push_str(&format!("{p},{t}"));
            for d in 0..ndim {
                row.push_str(&format!(",{}", ensemble.positions[k][[p, d]]));
            }
            if with_momenta {
                for d in 0..ndim {
                    row.push_str(&format!(",{}", ensemble.momenta[k][[p, d]]));
                }
            }
            row.push_str(&format!(",{}\n", u8::from(ensemble.escaped[p])));
            out.write_all(row.as_bytes())?;
        }
    }
    out.flush()
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)
}
