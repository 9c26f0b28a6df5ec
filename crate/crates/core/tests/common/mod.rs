#![allow(dead_code)]

use prefrec::config::RunConfig;

/// A run small enough for tests: about 100 users and a few dozen updates.
pub fn tiny_config(seed: u64) -> RunConfig {
    let text = format!(
        "seed = {seed}
users = 100
sessions_per_user = 20
min_requests = 60
segment_length = 20
preference_pairs = 200
hidden = 16
batch_size = 64
preference_batch_size = 32
pretrain_epochs = 1
epochs = 2
iterations = 40
eval_interval = 20
eval_users = 10
eval_sessions = 5
"
    );
    RunConfig::parse(&text, "desk").expect("tiny config parses")
}
