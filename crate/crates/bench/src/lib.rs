//! Shared fixtures for the benchmarks.

use rotwin_core::simgen::{FrailtyScenario, GapEffect};
use rotwin_core::{build_rotation_set, Arm, CopulaScenario, Design, EndpointSpec, RotationSet, Subject};

pub struct Fixture {
    pub treated: Vec<Subject>,
    pub controls: Vec<Subject>,
    pub rotations: RotationSet,
    pub specs: Vec<EndpointSpec>,
}

impl Fixture {
    pub fn from_design(design: &Design, seed: u64) -> Self {
        let (treated, controls) = design
            .generate(seed, 0)
            .expect("valid design")
            .into_iter()
            .partition(|s| s.arm == Arm::Treatment);
        Self {
            treated,
            controls,
            rotations: build_rotation_set(&design.hierarchy(), 720).expect("small hierarchy"),
            specs: design.endpoints(),
        }
    }
}

/// Death over three exchangeable non-fatal endpoints: six rotations.
pub fn copula(n_per_arm: usize) -> Design {
    Design::Copula(CopulaScenario::standard([0.15, 0.15, 0.15], 1000.0, n_per_arm))
}

/// Death, recurrence count, then first/last recurrence: two rotations.
pub fn frailty(n_per_arm: usize) -> Design {
    Design::Frailty(FrailtyScenario::standard(0.1, 4, GapEffect::Heterogeneous, n_per_arm))
}
