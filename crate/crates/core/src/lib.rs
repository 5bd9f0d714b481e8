pub mod chaincode;
pub mod cli;
pub mod codec;
pub mod crypto;
pub mod fixture;
pub mod harness;
pub mod identity;
pub mod ledger;
pub mod services;
