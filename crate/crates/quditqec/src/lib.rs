//! Simulation of pure dephasing for a spin-S molecular qudit coupled to a
//! proton spin bath, numerical synthesis of qudit error-correcting codes
//! tailored to that noise, and compilation of the resulting circuits into
//! transition-selective pulse sequences.

pub mod bath;
pub mod cce;
pub mod linalg;
pub mod optim;
pub mod pulse;
pub mod qec;
pub mod spin;
