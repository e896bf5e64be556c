pub mod oracles;
pub mod netcheck;
pub mod suite;
