pub mod bench;
pub mod eval;
pub mod gen_data;
pub mod grad_check;
pub mod train;
