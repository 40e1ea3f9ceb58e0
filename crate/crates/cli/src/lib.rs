//! Library surface of the pipeline harness, so integration tests drive the
//! same stage functions the binary dispatches to.

pub mod stages;
pub mod svg;
