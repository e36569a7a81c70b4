//! `mg`: the minigrid command suite.
//!
//! `mg testbed up <config>` runs a testbed daemon on a loopback port and
//! records the address in the run directory. Every other command is sent to
//! that daemon as one CLI-EXEC frame and answered with one CLI-RESULT frame.
//! Installed under an `mg-<tool>` name, the binary behaves as `mg <tool>`.

use std::env;
use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use minigrid::cli::{self, CaAction, CliError, Command, CommandOutput, TestbedAction};
use minigrid::wire::{read_frame, write_frame, Frame, MessageType};
use minigrid::{Span, Testbed, TestbedConfig};

const ENV_RUN_DIR: &str = "MINIGRID_RUN_DIR";
const ENV_SITE: &str = "MINIGRID_SITE";
const ENV_USER: &str = "MINIGRID_USER";
const DEFAULT_RUN_DIR: &str = "minigrid-run";
const ADDR_FILE: &str = "daemon.addr";
const IO_TIMEOUT: Duration = Duration::from_secs(300);

fn run_dir() -> PathBuf {
    env::var_os(ENV_RUN_DIR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR))
}

fn main() -> ExitCode {
    let argv: Vec<String> = env::args().collect();
    let out = dispatch(&argv).unwrap_or_else(|e| CommandOutput {
        stdout: String::new(),
        stderr: format!("mg: error: {e:#}\n"),
        code: cli::EXIT_REMOTE,
    });
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    let _ = io::stdout().flush();
    ExitCode::from(u8::try_from(out.code).unwrap_or(1))
}

fn dispatch(argv: &[String]) -> Result<CommandOutput> {
    let parsed = match cli::parse(argv) {
        Ok(c) => c,
        Err(e) => return Ok(cli::parse_failure(&e)),
    };
    let dir = run_dir();
    let tool = cli::tool_name(&parsed.command);
    let stream = connect(&dir);

    if let Command::Testbed {
        action: TestbedAction::Up { config },
    } = &parsed.command
    {
        if stream.is_err() {
            return serve(&dir, Path::new(config));
        }
    }
    let Ok(mut stream) = stream else {
        let e = CliError::new(
            "PoolUnreachable",
            format!("no testbed is running under {}", dir.display()),
        );
        return Ok(CommandOutput {
            stdout: String::new(),
            stderr: e.render(tool),
            code: e.exit_code(),
        });
    };

    let stdin = if needs_passphrase(&parsed.command) {
        read_passphrase()?
    } else {
        String::new()
    };
    let mut req = Frame::new(MessageType::CliExec).with("argc", argv.len());
    for (i, a) in argv.iter().enumerate() {
        req.set(&format!("arg-{i}"), a);
    }
    if let Some(site) = parsed.site.clone().or_else(|| env::var(ENV_SITE).ok()) {
        req.set("site", site);
    }
    if let Some(user) = parsed.as_user.clone().or_else(|| env::var(ENV_USER).ok()) {
        req.set("user", user);
    }
    req.payload = stdin.into_bytes();
    write_frame(&mut stream, &req).context("sending command to the testbed daemon")?;
    let reply = read_frame(&mut stream)
        .context("reading the testbed daemon's reply")?
        .ok_or_else(|| anyhow!("testbed daemon closed the connection"))?;
    decode_result(&reply)
}

fn needs_passphrase(cmd: &Command) -> bool {
    matches!(
        cmd,
        Command::ProxyInit { .. } | Command::Ca { action: CaAction::Sign { .. } }
    )
}

fn read_passphrase() -> Result<String> {
    let stdin = io::stdin();
    if stdin.is_terminal() {
        eprint!("Enter GRID pass phrase: ");
        let _ = io::stderr().flush();
    }
    let mut line = String::new();
    stdin.lock().read_line(&mut line).context("reading pass phrase")?;
    Ok(line)
}

fn connect(dir: &Path) -> io::Result<TcpStream> {
    let addr = fs::read_to_string(dir.join(ADDR_FILE))?;
    let stream = TcpStream::connect(addr.trim())?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    Ok(stream)
}

fn encode_result(out: &CommandOutput) -> Frame {
    let mut payload = out.stdout.clone().into_bytes();
    payload.extend_from_slice(out.stderr.as_bytes());
    Frame::new(MessageType::CliResult)
        .with("code", out.code)
        .with("stdout-len", out.stdout.len())
        .with_payload(payload)
}

fn decode_result(frame: &Frame) -> Result<CommandOutput> {
    if frame.is_error() {
        bail!(
            "daemon error [{}]: {}",
            frame.get("code").unwrap_or("?"),
            frame.get("detail").unwrap_or("")
        );
    }
    if frame.kind != MessageType::CliResult {
        bail!("unexpected {} reply", frame.kind);
    }
    let code: i32 = frame
        .get("code")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| anyhow!("reply without exit code"))?;
    let split: usize = frame
        .get("stdout-len")
        .and_then(|c| c.parse().ok())
        .filter(|n| *n <= frame.payload.len())
        .ok_or_else(|| anyhow!("reply without a valid stdout-len"))?;
    let (out, err) = frame.payload.split_at(split);
    Ok(CommandOutput {
        stdout: String::from_utf8_lossy(out).into_owned(),
        stderr: String::from_utf8_lossy(err).into_owned(),
        code,
    })
}

struct Request {
    argv: Vec<String>,
    site: Option<String>,
    user: Option<String>,
    stdin: String,
}

fn decode_request(frame: &Frame) -> Result<Request> {
    if frame.kind != MessageType::CliExec {
        bail!("expected CLI-EXEC, got {}", frame.kind);
    }
    let argc: usize = frame
        .get("argc")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| anyhow!("request without argc"))?;
    let argv = (0..argc)
        .map(|i| {
            frame
                .get(&format!("arg-{i}"))
                .map(str::to_string)
                .ok_or_else(|| anyhow!("request missing arg-{i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Request {
        argv,
        site: frame.get("site").map(str::to_string),
        user: frame.get("user").map(str::to_string),
        stdin: String::from_utf8_lossy(&frame.payload).into_owned(),
    })
}

fn usage_error(code: &str, msg: String) -> CommandOutput {
    let e = CliError::new(code, msg);
    CommandOutput {
        stdout: String::new(),
        stderr: e.render("mg-testbed"),
        code: e.exit_code(),
    }
}

/// Builds the testbed and answers commands until `mg testbed down`.
fn serve(dir: &Path, config: &Path) -> Result<CommandOutput> {
    let text = match fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return Ok(usage_error("NoSuchFile", format!("{}: {e}", config.display()))),
    };
    let cfg = match TestbedConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return Ok(usage_error("ConfigError", format!("{}: {e}", config.display()))),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for stale in ["sites", "logs"] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_dir_all(&p).with_context(|| format!("clearing {}", p.display()))?;
        }
    }
    let mut tb = match Testbed::build(cfg, dir) {
        Ok(tb) => tb,
        Err(e) => {
            let e = CliError::from(e);
            return Ok(CommandOutput {
                stdout: String::new(),
                stderr: e.render("mg-testbed"),
                code: e.exit_code(),
            });
        }
    };
    let listener = TcpListener::bind("127.0.0.1:0").context("binding a loopback port")?;
    let addr = listener.local_addr()?;
    let addr_file = dir.join(ADDR_FILE);
    fs::write(&addr_file, format!("{addr}\n")).with_context(|| format!("writing {}", addr_file.display()))?;

    print!("{}", cli::announce(&tb));
    println!("testbed daemon listening on {addr}");
    io::stdout().flush()?;

    let started = Instant::now();
    let default_site = tb.sites().next().map(|s| s.name().to_string()).unwrap_or_default();
    for conn in listener.incoming() {
        let mut stream = match conn {
            Ok(s) => s,
            Err(e) => {
                eprintln!("mg-testbed: accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
        let request = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => continue,
            Err(e) => {
                let _ = write_frame(&mut stream, &Frame::error("ProtocolError", &e.to_string()));
                continue;
            }
        };
        let Request {
            argv,
            site,
            user,
            stdin,
        } = match decode_request(&request) {
            Ok(r) => r,
            Err(e) => {
                let _ = write_frame(&mut stream, &Frame::error("ProtocolError", &format!("{e:#}")));
                continue;
            }
        };
        let due = tb.clock().base() + Span::from_millis(started.elapsed().as_millis() as i64);
        if due > tb.now() {
            tb.advance_to(due);
        }
        let site = site.unwrap_or_else(|| default_site.clone());
        let user = user.unwrap_or_else(|| site.clone());
        let out = cli::execute(&mut tb, &site, &user, &argv, &stdin);
        let _ = write_frame(&mut stream, &encode_result(&out));
        let down = matches!(
            cli::parse(&argv).map(|c| c.command),
            Ok(Command::Testbed {
                action: TestbedAction::Down
            })
        );
        if down && out.code == cli::EXIT_OK {
            break;
        }
    }
    fs::remove_file(&addr_file).with_context(|| format!("removing {}", addr_file.display()))?;
    Ok(CommandOutput::default())
}
