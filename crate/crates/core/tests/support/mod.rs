pub mod gradcheck;
pub mod loss_oracles;
