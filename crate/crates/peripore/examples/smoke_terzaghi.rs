// profile inspection vs series
use peripore::analytic::{consolidation_coefficient, terzaghi_pressure, TerzaghiParams};
use peripore::validation::terzaghi_scenario;

fn main() {
    let mut sc = terzaghi_scenario(2.0);
    sc.solver.t_end = 80.0;
    let c_v = consolidation_coefficient(&sc.material);
    println!("c_v = {c_v:.4e} m^2/s");
    let mut run = sc.build_run().unwrap();
    let traj = run.march(1).unwrap();
    let iters: Vec<usize> = traj.reports.iter().take(8).map(|r| r.iterations).collect();
    println!("first-step iterations: {iters:?}");
    let oracle = TerzaghiParams::new(0.2, c_v, 50e3);
    let snap = traj.nearest(73.0);
    println!("t = {} s (T = {:.3})", snap.time, c_v * snap.time / 0.04);
    // column average per row
    use std::collections::BTreeMap;
    let mut rows: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for i in 0..snap.len() {
        if snap.interior[i] {
            let y = snap.position[i].y;
            let e = rows.entry((y * 1e9) as i64).or_insert((y, 0.0, 0));
            e.1 += snap.p_w[i];
            e.2 += 1;
        }
    }
    println!("{:>8} {:>12} {:>12}", "y", "p_num", "p_series");
    for (_, (y, sum, n)) in rows.iter().rev() {
        let pn = sum / *n as f64;
        let ps = terzaghi_pressure(0.2 - y, snap.time, &oracle);
        println!("{y:>8.4} {pn:>12.1} {ps:>12.1}");
    }
}
