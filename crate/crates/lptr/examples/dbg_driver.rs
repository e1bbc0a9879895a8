// debug: run the failing config and print records
use lptr::driver::*;
use lptr::gcp::ProxMode;
use lptr::grid::*;
use lptr::regularizer::*;
use lptr::model::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    // replicate DenseQuadratic inline
    struct DQ { grid: Grid, a: Vec<Vec<f64>>, c: Vec<f64>, counters: EvalCounters }
    impl DQ {
        fn apply(&self, v: &[f64]) -> Vec<f64> {
            self.a.iter().map(|row| row.iter().zip(v).map(|(&aij,&vj)| aij*vj).sum()).collect()
        }
    }
    impl SmoothObjective for DQ {
        fn grid(&self) -> Grid { self.grid }
        fn control_space(&self) -> Space { Space::L2 }
        fn value(&self, u: &GridFunction) -> lptr::Result<f64> {
            self.counters.bump_value();
            let au = self.apply(u.values());
            let h2 = self.grid.h()*self.grid.h();
            let quad: f64 = u.values().iter().zip(&au).map(|(&x,&y)| x*y).sum();
            let lin: f64 = u.values().iter().zip(&self.c).map(|(&x,&y)| x*y).sum();
            Ok(h2*(0.5*quad + lin))
        }
        fn gradient(&self, u: &GridFunction) -> lptr::Result<GridFunction> {
            let mut g = self.apply(u.values());
            for (gi,ci) in g.iter_mut().zip(&self.c) { *gi += ci; }
            Ok(GridFunction::new(self.grid, Space::L2, g))
        }
        fn hess_vec(&self, _u: &GridFunction, s: &GridFunction) -> lptr::Result<GridFunction> {
            self.counters.bump_hess();
            Ok(GridFunction::new(self.grid, Space::L2, self.apply(s.values())))
        }
        fn counters(&self) -> &EvalCounters { &self.counters }
    }
    let grid = Grid::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let m = grid.len();
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m { for j in 0..=i {
        let v: f64 = rng.gen_range(-0.4..0.4); a[i][j]=v; a[j][i]=v; } a[i][i] += 0.4*m as f64; }
    let c: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let obj = DQ { grid, a, c, counters: EvalCounters::new() };
    let reg = RegularizerParams::new(0.7, 0.05, 0.2, BoxBounds::symmetric(5.0));
    for variant in [TrVariant::Gcp, TrVariant::NcGcp, TrVariant::Spg, TrVariant::NcSpg, TrVariant::MmSpg, TrVariant::NcMmSpg] {
        let mut cfg = TRConfig::for_variant(variant, reg.p);
        cfg.max_outer = 80;
        let out = solve(&obj, &reg, &cfg, variant.name()).unwrap();
        println!("{:<12} conv={} stop={:?} iters={} h0={:.3e} hK={:.3e} thr={:.3e} eps_K={:.3e}",
            variant.name(), out.converged, out.stop, out.row.iterations, out.h0, out.row.h_final,
            cfg.tau0*out.h0, out.row.eps_final);
        if !(out.row.h_final < cfg.tau0*out.h0 || out.row.h_final == 0.0) {
            for r in out.records.iter().rev().take(4) {
                println!("  k={} acc={} rho={:.2e} pred={:.3e} cred={:.3e} h={:.3e} d={:.2e} eps={:.2e}",
                    r.k, r.accepted, r.rho, r.pred, r.cred, r.h, r.delta, r.eps);
            }
        }
        let _ = ProxMode::Convex;
    }
}
