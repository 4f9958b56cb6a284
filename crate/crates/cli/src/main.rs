use clap::Parser;

fn main() {
    let cli = mvlab_cli::Cli::parse();
    let code = match mvlab_cli::execute(cli) {
        Ok((summary, verdict)) => {
            println!("{summary}");
            verdict.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            mvlab_cli::error_exit_code(&e)
        }
    };
    std::process::exit(code);
}
