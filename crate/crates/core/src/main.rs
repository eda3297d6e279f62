use std::io::{self, Write};

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let (mut out, mut err) = (io::stdout(), io::stderr());
    let code = qecc_lab::cli::run(&argv, &mut qecc_lab::cli::Io { out: &mut out, err: &mut err });
    let _ = out.flush();
    std::process::exit(code);
}
