//! Operator CLI, blocking HTTP client and the scenario harness for tenet.

pub mod cli;
pub mod client;
pub mod harness;
pub mod scenarios;

use harness::{Env, Scenario, Transcript};

/// Runs scenarios in order, or on one thread each when `parallel`.
pub fn run_scenarios(env: &Env, list: &[&Scenario], parallel: bool) -> Vec<Transcript> {
    if !parallel {
        return list.iter().map(|s| s.run(env)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = list.iter().map(|s| scope.spawn(move || s.run(env))).collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    })
}
