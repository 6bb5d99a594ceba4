pub mod attack;
pub mod bench;
pub mod keygen;
pub mod node;
pub mod resume;
