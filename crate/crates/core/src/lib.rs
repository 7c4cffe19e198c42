pub mod critid;
pub mod detect;
pub mod dynsim;
pub mod netmodel;
pub mod phasor;
pub mod relay;
pub mod studio;
