//! Command-line front end.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tenet_api::wire::{NewGroup, NewServiceAccount, NewUser};
use tenet_api::ServerConfig;
use tenet_core::id::{EntityRef, IdKind, OpaqueId};
use tenet_core::idp::NewIdp;
use tenet_core::tenant::{Decision, TenantProfile};
use tenet_core::vault::{encode_kv, CredentialType, Permission};

use crate::client::{Auth, Client, ClientError};
use crate::harness::Env;
use crate::scenarios;

pub const EXIT_OK: i32 = 0;
pub const EXIT_API: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tenet", version, about = "Operate a tenet control plane and run its scenario harness")]
pub struct Cli {
    /// Base URL of the service.
    #[arg(long, global = true, env = "TENET_URL", default_value = "http://127.0.0.1:8080")]
    url: String,
    #[arg(long, global = true, env = "TENET_OPERATOR_KEY", hide_env_values = true)]
    operator_key: Option<String>,
    /// Tenant, service account or agent client id (HTTP basic).
    #[arg(long, global = true, env = "TENET_CLIENT_ID")]
    client_id: Option<String>,
    #[arg(long, global = true, env = "TENET_CLIENT_SECRET", hide_env_values = true)]
    client_secret: Option<String>,
    /// Bearer token; takes precedence over client credentials.
    #[arg(long, global = true, env = "TENET_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the service in the foreground.
    Serve {
        /// TOML config file; TENET_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    #[command(subcommand)]
    Tenant(TenantCmd),
    #[command(subcommand)]
    Idp(IdpCmd),
    #[command(subcommand)]
    User(UserCmd),
    #[command(subcommand)]
    Group(GroupCmd),
    /// Service accounts.
    #[command(subcommand)]
    Sa(SaCmd),
    #[command(subcommand)]
    Agent(AgentCmd),
    #[command(subcommand)]
    Secret(SecretCmd),
    #[command(subcommand)]
    Scenario(ScenarioCmd),
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long)]
    name: String,
    #[arg(long)]
    email: String,
    #[arg(long = "redirect-uri")]
    redirect_uris: Vec<String>,
    #[arg(long, default_value = "")]
    description: String,
}

impl ProfileArgs {
    fn profile(self) -> TenantProfile {
        TenantProfile {
            name: self.name,
            contact_email: self.email,
            redirect_uris: self.redirect_uris,
            description: self.description,
        }
    }
}

#[derive(Debug, Subcommand)]
enum TenantCmd {
    /// Ask for a new administrator tenant; prints its id.
    Request(ProfileArgs),
    /// Operator decision on a requested tenant.
    Approve {
        tenant_id: String,
        #[arg(long)]
        deny: bool,
    },
    /// Create a child of the authenticated tenant.
    CreateChild(ProfileArgs),
    /// Deactivate with the operator key, or as the parent tenant.
    Deactivate { tenant_id: String },
}

#[derive(Debug, Subcommand)]
enum IdpCmd {
    Register {
        #[arg(long)]
        alias: String,
        #[arg(long)]
        authorize_endpoint: String,
        #[arg(long)]
        token_endpoint: String,
        #[arg(long)]
        broker_client_id: String,
        #[arg(long)]
        broker_client_secret: String,
        #[arg(long, default_value = "idphint")]
        entity_id_param: String,
    },
    /// Route an institution's entityID to an IdP alias.
    Map {
        #[arg(long)]
        entity_id: String,
        #[arg(long)]
        alias: String,
    },
}

#[derive(Debug, Subcommand)]
enum UserCmd {
    Register {
        #[arg(long)]
        username: String,
        #[arg(long)]
        email: String,
        /// key=value, repeatable
        #[arg(long = "attr", value_parser = key_value)]
        attrs: Vec<(String, String)>,
    },
    Enable { user_id: String },
    Disable { user_id: String },
}

#[derive(Debug, Subcommand)]
enum GroupCmd {
    Create {
        #[arg(long)]
        name: String,
        #[arg(long = "role")]
        roles: Vec<String>,
    },
    /// Add a member (an entity reference such as user:<tenant>:<user>).
    Add { group_id: String, member: String },
}

#[derive(Debug, Subcommand)]
enum SaCmd {
    Register {
        #[arg(long)]
        name: String,
        #[arg(long = "role")]
        roles: Vec<String>,
        #[arg(long = "attr", value_parser = key_value)]
        attrs: Vec<(String, String)>,
    },
    Delete { id: String },
}

#[derive(Debug, Subcommand)]
enum AgentCmd {
    Register,
    Delete { id: String },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ctype {
    SshKey,
    Password,
    ApiToken,
    KvSet,
}

impl From<Ctype> for CredentialType {
    fn from(c: Ctype) -> Self {
        match c {
            Ctype::SshKey => CredentialType::SshKey,
            Ctype::Password => CredentialType::Password,
            Ctype::ApiToken => CredentialType::ApiToken,
            Ctype::KvSet => CredentialType::KvSet,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Perm {
    Read,
    Write,
    Owner,
}

impl From<Perm> for Permission {
    fn from(p: Perm) -> Self {
        match p {
            Perm::Read => Permission::Read,
            Perm::Write => Permission::Write,
            Perm::Owner => Permission::Owner,
        }
    }
}

#[derive(Debug, Subcommand)]
enum SecretCmd {
    /// Store a credential; prints its credential token.
    Store {
        #[arg(long = "type", value_enum)]
        ctype: Ctype,
        #[arg(long, conflicts_with_all = ["file", "stdin", "kv"])]
        value: Option<String>,
        #[arg(long, conflicts_with_all = ["stdin", "kv"])]
        file: Option<PathBuf>,
        #[arg(long, conflicts_with = "kv")]
        stdin: bool,
        /// key=value for kv-set, repeatable
        #[arg(long, value_parser = key_value)]
        kv: Vec<(String, String)>,
        #[arg(long, default_value = "")]
        description: String,
    },
    /// Write a credential's payload to stdout or a file.
    Fetch {
        credential_token: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Share {
        credential_token: String,
        #[arg(long)]
        grantee: String,
        #[arg(long, value_enum, default_value = "read")]
        permission: Perm,
    },
    Revoke {
        credential_token: String,
        #[arg(long)]
        grantee: String,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCmd {
    /// Run scenarios against a running service; `all` runs every one.
    Run {
        #[arg(required = true, value_parser = scenario_name)]
        names: Vec<String>,
        /// Write `STEP <n> <PASS|FAIL> <description>` lines here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Run the scenarios concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Corrupt each artifact in turn and check the failure is localized.
    Sweep {
        #[arg(required = true, value_parser = scenario_name)]
        names: Vec<String>,
    },
    List,
}

fn key_value(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn scenario_name(s: &str) -> std::result::Result<String, String> {
    if s == "all" || scenarios::find(s).is_some() {
        Ok(s.to_string())
    } else {
        Err(format!("unknown scenario; choose from all, {}", scenarios::names().join(", ")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Api(#[from] ClientError),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_API,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn id(raw: &str, kind: IdKind) -> Result<OpaqueId> {
    OpaqueId::parse_kind(raw, kind).map_err(|e| CliError::Usage(e.message))
}

fn entity(raw: &str) -> Result<EntityRef> {
    EntityRef::parse(raw).map_err(|e| CliError::Usage(e.message))
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().ansi().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return e.exit_code();
        }
    };
    match cli.execute(out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

impl Cli {
    fn client(&self) -> Client {
        Client::new(&self.url)
    }

    /// Bearer token if given, else client credentials, else nothing (the
    /// service then answers INVALID_CLIENT).
    fn auth(&self) -> Auth {
        if let Some(t) = &self.token {
            return Auth::Bearer(t.clone());
        }
        match (&self.client_id, &self.client_secret) {
            (Some(id), Some(secret)) => Auth::basic(id, secret),
            _ => Auth::None,
        }
    }

    fn operator(&self) -> Result<String> {
        self.operator_key
            .clone()
            .ok_or_else(|| CliError::Usage("--operator-key (or TENET_OPERATOR_KEY) is required".into()))
    }

    fn execute(&self, out: &mut dyn Write) -> Result<()> {
        let c = self.client();
        match &self.command {
            Command::Serve { config } => serve(config.as_deref(), out),
            Command::Tenant(cmd) => self.tenant(&c, cmd, out),
            Command::Idp(cmd) => self.idp(&c, cmd, out),
            Command::User(cmd) => self.user(&c, cmd, out),
            Command::Group(cmd) => self.group(&c, cmd, out),
            Command::Sa(SaCmd::Register { name, roles, attrs }) => {
                let sa = NewServiceAccount { name: name.clone(), roles: roles.clone(), attributes: attrs.iter().cloned().collect() };
                let p = c.register_service_account(&self.auth(), &sa)?;
                writeln!(out, "id={}\nclient_id={}\nclient_secret={}", p.id, p.client_id, p.client_secret)?;
                Ok(())
            }
            Command::Sa(SaCmd::Delete { id: raw }) => {
                c.delete_service_account(&self.auth(), &id(raw, IdKind::ServiceAccount)?)?;
                writeln!(out, "deleted {raw}")?;
                Ok(())
            }
            Command::Agent(AgentCmd::Register) => {
                let p = c.register_agent(&self.auth())?;
                writeln!(out, "id={}\nclient_id={}\nclient_secret={}", p.id, p.client_id, p.client_secret)?;
                Ok(())
            }
            Command::Agent(AgentCmd::Delete { id: raw }) => {
                c.delete_agent(&self.auth(), &id(raw, IdKind::Agent)?)?;
                writeln!(out, "deleted {raw}")?;
                Ok(())
            }
            Command::Secret(cmd) => self.secret(&c, cmd, out),
            Command::Scenario(cmd) => self.scenario(cmd, out),
        }
    }

    fn tenant(&self, c: &Client, cmd: &TenantCmd, out: &mut dyn Write) -> Result<()> {
        match cmd {
            TenantCmd::Request(p) => {
                let profile = ProfileArgs { redirect_uris: p.redirect_uris.clone(), ..clone_profile(p) }.profile();
                writeln!(out, "{}", c.request_tenant(&profile)?)?;
            }
            TenantCmd::Approve { tenant_id, deny } => {
                let decision = if *deny { Decision::Deny } else { Decision::Approve };
                let r = c.decide(&self.operator()?, &id(tenant_id, IdKind::Tenant)?, decision)?;
                writeln!(out, "tenant_id={}\nstatus={}", r.tenant_id, json_word(&r.status))?;
                if let Some(creds) = r.credentials {
                    writeln!(out, "client_id={}\nclient_secret={}", creds.client_id, creds.client_secret)?;
                }
            }
            TenantCmd::CreateChild(p) => {
                let r = c.create_child(&self.auth(), &clone_profile(p).profile())?;
                writeln!(
                    out,
                    "tenant_id={}\nclient_id={}\nclient_secret={}",
                    r.tenant_id, r.credentials.client_id, r.credentials.client_secret
                )?;
            }
            TenantCmd::Deactivate { tenant_id } => {
                let auth = match &self.operator_key {
                    Some(k) => Auth::Operator(k.clone()),
                    None => self.auth(),
                };
                let t = c.deactivate(&auth, &id(tenant_id, IdKind::Tenant)?)?;
                writeln!(out, "tenant_id={}\nstatus={}", t.tenant_id, json_word(&t.status))?;
            }
        }
        Ok(())
    }

    fn idp(&self, c: &Client, cmd: &IdpCmd, out: &mut dyn Write) -> Result<()> {
        match cmd {
            IdpCmd::Register { alias, authorize_endpoint, token_endpoint, broker_client_id, broker_client_secret, entity_id_param } => {
                let idp = NewIdp {
                    alias: alias.clone(),
                    authorize_endpoint: authorize_endpoint.clone(),
                    token_endpoint: token_endpoint.clone(),
                    broker_client_id: broker_client_id.clone(),
                    broker_client_secret: broker_client_secret.clone(),
                    entity_id_param: entity_id_param.clone(),
                };
                let r = c.register_idp(&self.auth(), &idp)?;
                writeln!(out, "{}", r.alias)?;
            }
            IdpCmd::Map { entity_id, alias } => {
                c.map_institution(&self.auth(), entity_id, alias)?;
                writeln!(out, "{entity_id} -> {alias}")?;
            }
        }
        Ok(())
    }

    fn user(&self, c: &Client, cmd: &UserCmd, out: &mut dyn Write) -> Result<()> {
        match cmd {
            UserCmd::Register { username, email, attrs } => {
                let u = NewUser { username: username.clone(), email: email.clone(), attributes: attrs.iter().cloned().collect() };
                writeln!(out, "{}", c.register_user(&self.auth(), &u)?)?;
            }
            UserCmd::Enable { user_id } | UserCmd::Disable { user_id } => {
                let enabled = matches!(cmd, UserCmd::Enable { .. });
                let u = c.set_user_enabled(&self.auth(), &id(user_id, IdKind::User)?, enabled)?;
                writeln!(out, "user_id={}\nenabled={}", u.user_id, u.enabled)?;
            }
        }
        Ok(())
    }

    fn group(&self, c: &Client, cmd: &GroupCmd, out: &mut dyn Write) -> Result<()> {
        match cmd {
            GroupCmd::Create { name, roles } => {
                let g = NewGroup { name: name.clone(), roles: roles.clone() };
                writeln!(out, "{}", c.create_group(&self.auth(), &g)?)?;
            }
            GroupCmd::Add { group_id, member } => {
                c.add_member(&self.auth(), &id(group_id, IdKind::Group)?, &entity(member)?)?;
                writeln!(out, "added {member}")?;
            }
        }
        Ok(())
    }

    fn secret(&self, c: &Client, cmd: &SecretCmd, out: &mut dyn Write) -> Result<()> {
        match cmd {
            SecretCmd::Store { ctype, value, file, stdin, kv, description } => {
                let payload = match (value, file, stdin, kv.is_empty()) {
                    (Some(v), _, _, _) => v.clone().into_bytes(),
                    (_, Some(path), _, _) => std::fs::read(path)
                        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?,
                    (_, _, true, _) => {
                        let mut buf = Vec::new();
                        std::io::stdin().read_to_end(&mut buf)?;
                        buf
                    }
                    (_, _, _, false) => encode_kv(&kv.iter().cloned().collect()),
                    _ => return Err(CliError::Usage("give the payload with --value, --file, --stdin or --kv".into())),
                };
                let cred = c.store_secret(&self.auth(), (*ctype).into(), &payload, description)?;
                writeln!(out, "{cred}")?;
            }
            SecretCmd::Fetch { credential_token, out: path } => {
                id(credential_token, IdKind::Credential)?;
                let (_, payload, _) = c.fetch_secret(&self.auth(), credential_token)?;
                match path {
                    Some(p) => std::fs::write(p, &payload)?,
                    None => out.write_all(&payload)?,
                }
            }
            SecretCmd::Share { credential_token, grantee, permission } => {
                id(credential_token, IdKind::Credential)?;
                c.share(&self.auth(), credential_token, &entity(grantee)?, (*permission).into())?;
                writeln!(out, "shared {credential_token} with {grantee}")?;
            }
            SecretCmd::Revoke { credential_token, grantee } => {
                id(credential_token, IdKind::Credential)?;
                c.revoke_share(&self.auth(), credential_token, &entity(grantee)?)?;
                writeln!(out, "revoked {grantee} on {credential_token}")?;
            }
        }
        Ok(())
    }

    fn scenario(&self, cmd: &ScenarioCmd, out: &mut dyn Write) -> Result<()> {
        let selected = |names: &[String]| -> Vec<&'static crate::harness::Scenario> {
            if names.iter().any(|n| n == "all") {
                scenarios::ALL.to_vec()
            } else {
                names.iter().filter_map(|n| scenarios::find(n)).collect()
            }
        };
        match cmd {
            ScenarioCmd::List => {
                for s in scenarios::ALL {
                    writeln!(out, "{:<18} {} steps", s.name, s.steps.len())?;
                }
                Ok(())
            }
            ScenarioCmd::Run { names, report, parallel } => {
                let env = Env::new(&self.url, &self.operator()?);
                let list = selected(names);
                let transcripts = crate::run_scenarios(&env, &list, *parallel);
                let mut report_text = String::new();
                for t in &transcripts {
                    write!(out, "{}", t.render())?;
                    if transcripts.len() > 1 {
                        report_text.push_str(&format!("SCENARIO {} {}\n", t.scenario, if t.passed() { "PASS" } else { "FAIL" }));
                    }
                    report_text.push_str(&t.report());
                }
                if let Some(path) = report {
                    std::fs::write(path, report_text)?;
                }
                let failed: Vec<_> = transcripts.iter().filter(|t| !t.passed()).map(|t| t.scenario).collect();
                if failed.is_empty() {
                    Ok(())
                } else {
                    Err(CliError::Failed(format!("scenario failed: {}", failed.join(", "))))
                }
            }
            ScenarioCmd::Sweep { names } => {
                let env = Env::new(&self.url, &self.operator()?);
                let mut bad = Vec::new();
                for s in selected(names) {
                    for case in s.fault_sweep(&env) {
                        let got = case.first_failure.map_or("none".to_string(), |n| n.to_string());
                        let verdict = if case.localized { "PASS" } else { "FAIL" };
                        writeln!(
                            out,
                            "{verdict} {:<18} {:<22} expected step {} first failure {got}",
                            s.name, case.artifact, case.expected_step
                        )?;
                        if !case.localized {
                            bad.push(format!("{}/{}", s.name, case.artifact));
                        }
                    }
                }
                if bad.is_empty() {
                    Ok(())
                } else {
                    Err(CliError::Failed(format!("fault not localized: {}", bad.join(", "))))
                }
            }
        }
    }
}

fn clone_profile(p: &ProfileArgs) -> ProfileArgs {
    ProfileArgs {
        name: p.name.clone(),
        email: p.email.clone(),
        redirect_uris: p.redirect_uris.clone(),
        description: p.description.clone(),
    }
}

/// The wire spelling of a unit enum, e.g. ACTIVE.
fn json_word<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn serve(config: Option<&std::path::Path>, out: &mut dyn Write) -> Result<()> {
    let config = ServerConfig::load(config).map_err(|e| CliError::Usage(e.to_string()))?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = tenet_api::start(config).await.map_err(|e| CliError::Failed(e.to_string()))?;
        writeln!(out, "listening on {}", handle.base_url())?;
        out.flush()?;
        tokio::select! {
            r = tokio::signal::ctrl_c() => {
                r?;
                handle.shutdown().await?;
            }
        }
        Ok(())
    })
}
