use drsafe::sim::{run_closed_loop, Obstacle, ScenarioConfig, SolverForm, StepStatus};

fn run(tag: &str, cfg: ScenarioConfig) {
    let t0 = std::time::Instant::now();
    let log = run_closed_loop(&cfg).unwrap();
    let fin = log.final_state();
    let dist = ((fin[0] - cfg.goal[0]).powi(2) + (fin[1] - cfg.goal[1]).powi(2)).sqrt();
    let min_h = log.records.iter().filter_map(|r| r.h).fold(f64::INFINITY, f64::min);
    let n_bad = log.records.iter().filter(|r| matches!(r.status, StepStatus::Infeasible | StepStatus::SolverFailed)).count();
    println!("{tag}: dist {dist:.3} min_h {min_h:.3} bad {n_bad} wall {:.1}s", t0.elapsed().as_secs_f64());
}

fn main() {
    let m2 = ScenarioConfig {
        goal: [5.0, 5.0],
        obstacle: Some(Obstacle { center: [3.0, 2.0], radius: 1.0 }),
        seed: 12,
        horizon: 500,
        ..Default::default()
    };
    run("M=2 epi", m2.clone());
    run("M=2 red", ScenarioConfig { solver_form: SolverForm::Reduced, ..m2 });
    run("M=1 epi", ScenarioConfig { seed: 12, ..Default::default() });
}
