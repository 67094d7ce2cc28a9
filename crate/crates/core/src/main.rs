fn main() { std::process::exit(das_lab::cli::main()) }
