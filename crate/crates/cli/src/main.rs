fn main() { ofulqr::probe(); }
