use clap::{CommandFactory, Parser};

use tempee::cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            // value errors do not include the usage line on their own
            let mut cmd = Cli::command();
            let sub = std::env::args().nth(1);
            let usage = match sub.as_deref().and_then(|s| cmd.find_subcommand_mut(s)) {
                Some(sc) => sc.render_usage(),
                None => cmd.render_usage(),
            };
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{usage}");
            }
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
