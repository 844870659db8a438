use clap::error::ErrorKind;
use clap::Parser;
use lvm::args::Cli;
use lvm::error::CliError;
use std::io::Write;
use std::process::ExitCode;

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.to_string().trim().to_string())),
    };
    if let Err(e) = lvm::configure_threads() {
        return fail(&e);
    }
    match lvm::run(&cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = stdout.write_all(&out).and_then(|_| stdout.flush()) {
                return fail(&CliError::io(std::path::Path::new("<stdout>"), e));
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
