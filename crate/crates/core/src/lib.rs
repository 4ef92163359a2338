pub mod adversary;
pub mod cli;
pub mod confirm;
pub mod dag;
pub mod ledger;
pub mod phantom;
pub mod sim;
pub mod stats;
