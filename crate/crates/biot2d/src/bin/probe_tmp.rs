use biot2d::bench::MeshHierarchy;
use biot2d::forms::{self, ScaledParameters};
use biot2d::schwarz::{self, SchwarzConfig};
use biot2d::spaces::build_spaces;

fn main() {
    // SPD path: contraction in the A-norm for small storage
    for k in [0usize, 1] {
        for lh in [1.0, 100.0] {
            for cs in [1.0, 1e-4] {
                let params = ScaledParameters::new(lh, 1.0, cs, k).unwrap();
                let hier = MeshHierarchy::nested(4, 8).unwrap();
                let space = build_spaces(hier.finest(), k);
                let blocks = forms::assemble_blocks(&space);
                let op = forms::assemble_spd(&space, &blocks, &params).unwrap();
                let pc = schwarz::build_spd_preconditioner(&hier.meshes, &space, &op, &SchwarzConfig::default()).unwrap();
                let n = space.w_dofs();
                let a_norm = |w: &[f64]| -> f64 {
                    let mut aw = vec![0.0; n];
                    op.apply(w, &mut aw);
                    biot2d::linalg::dot(w, &aw).max(0.0).sqrt()
                };
                let mut z: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5).collect();
                let mut rho = 0.0f64;
                for _ in 0..150 {
                    let mut az = vec![0.0; n];
                    op.apply(&z, &mut az);
                    let c = pc.correction(&az);
                    let ez: Vec<f64> = z.iter().zip(&c).map(|(a, b)| a - b).collect();
                    rho = a_norm(&ez) / a_norm(&z);
                    let nrm = biot2d::linalg::norm2(&ez);
                    z = ez.iter().map(|v| v / nrm).collect();
                }
                println!("k={k} lambda={lh} cs={cs}: spd rho_A ~ {rho:.4}");
            }
        }
    }
}
