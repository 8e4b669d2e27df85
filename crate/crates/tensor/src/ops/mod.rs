pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod matmul;
pub mod pool;
