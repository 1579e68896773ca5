use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::game::{Award, AwardSet};
use crate::rng;
use crate::simulator::{AwardPolicy, DecisionContext};

/// Uniform draw over the awards that fit in `budget`. Award 0 always fits.
pub fn random_choose<R: Rng + ?Sized>(awards: &AwardSet, budget: f64, rng: &mut R) -> Award {
    let n = awards.affordable(budget).count();
    // affordable awards are a prefix because costs increase with the index
    rng.random_range(0..n)
}

/// Picks a random affordable award for each customer in turn, paying as it
/// goes.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: rng::stream(seed, &[0x5a, 0]),
        }
    }
}

impl AwardPolicy for RandomPolicy {
    fn name(&self) -> String {
        "Random".into()
    }

    fn choose(&mut self, ctx: &DecisionContext<'_>) -> Vec<Award> {
        let mut budget = ctx.budget;
        (0..ctx.num_customers())
            .map(|_| {
                let a = random_choose(ctx.awards, budget, &mut self.rng);
                budget -= ctx.awards.cost_of(a);
                a
            })
            .collect()
    }
}
