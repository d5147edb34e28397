//! Shared inputs for the criterion benches.

use bcer2_core::ledger::Chain;
use bcer2_core::poc::run_poc;
use bcer2_core::records::NetworkParams;

/// A committed PoC chain of `records` blocks over `validators` validators.
pub fn poc_chain(records: usize, validators: usize) -> (NetworkParams, Chain) {
    let (_, net) = run_poc(records, validators, 7).expect("poc runs");
    (net.params().clone(), (*net.chain()).clone())
}
