//! Reference computations for checking the fdd kernels. Everything here is
//! deliberately naive and shares no code with `fdd-core`.

pub mod data;
pub mod oracle;
