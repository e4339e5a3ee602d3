pub mod checks;
pub mod crypto;
pub mod keystore;
pub mod netsim;
pub mod pca;
pub mod protocol;
pub mod runner;
pub mod tpm;
pub mod world;
