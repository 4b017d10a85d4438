pub mod build_graph;
pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod label_prop;
pub mod train;
