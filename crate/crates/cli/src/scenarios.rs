//! The six end-to-end scenarios.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::Rng;
use tenet_api::wire::{AuthorizeQuery, NewServiceAccount};
use tenet_core::id::EntityKind;
use tenet_core::token::TokenType;
use tenet_core::vault::{encode_kv, CredentialType, Permission};
use url::Url;

use crate::client::Auth;
use crate::harness::{api, ensure, Artifact, Corruption, Ctx, Env, Scenario, Step};

pub const ALL: [&Scenario; 6] = [&HTRC_LOGIN, &HTRC_CAPSULE, &MFT_AGENT, &MFT_DELEGATED, &MFT_USER, &GALAXY_FEDERATION];

pub fn find(name: &str) -> Option<&'static Scenario> {
    ALL.iter().copied().find(|s| s.name == name)
}

pub fn names() -> Vec<&'static str> {
    ALL.iter().map(|s| s.name).collect()
}

fn param(url: &str, key: &str) -> Result<String, String> {
    let u = Url::parse(url).map_err(|e| format!("{url}: {e}"))?;
    u.query_pairs()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.into_owned())
        .ok_or_else(|| format!("{key} missing from {url}"))
}

/// `url` with `key` set to `value`, other parameters kept in order.
fn with_param(url: &str, key: &str, value: &str) -> Result<String, String> {
    let mut u = Url::parse(url).map_err(|e| format!("{url}: {e}"))?;
    let pairs: Vec<(String, String)> = u
        .query_pairs()
        .map(|(k, v)| {
            let v = if k == key { value.to_string() } else { v.into_owned() };
            (k.into_owned(), v)
        })
        .collect();
    u.query_pairs_mut().clear().extend_pairs(pairs);
    Ok(u.into())
}

fn without_query(url: &str) -> Result<String, String> {
    let mut u = Url::parse(url).map_err(|e| format!("{url}: {e}"))?;
    u.set_query(None);
    Ok(u.into())
}

fn random_text(prefix: &str) -> String {
    format!("{prefix}-{:032x}", rand::rng().random::<u128>())
}

/// Full browser login for `persona` through the tenant saved at `prefix`;
/// saves the access token and user id under `out`.
fn sign_in(env: &Env, ctx: &mut Ctx, prefix: &str, redirect: &str, persona: &str, out: &str) -> Result<(), String> {
    ctx.request("GET /oauth2/authorize, IdP login, GET /oauth2/callback, POST /oauth2/token");
    let q = AuthorizeQuery {
        client_id: ctx.get(&format!("{prefix}.client_id"))?.to_string(),
        redirect_uri: redirect.to_string(),
        idp_hint: Some("cilogon".into()),
        entity_id: None,
        state: Some(ctx.run.clone()),
    };
    let r = env
        .client
        .login(&ctx.basic(prefix)?, &q, persona, &format!("{persona}-pw"))
        .map_err(api)?;
    ensure(r.tokens.id_token.is_some(), || "login returned no id_token".into())?;
    ctx.set(&format!("{out}.token"), r.tokens.access_token);
    ctx.set(&format!("{out}.user"), r.user_id);
    Ok(())
}

/// Checks a user token the way a gateway or middleware would: introspect
/// with its own tenant credentials.
fn check_user_token(env: &Env, ctx: &mut Ctx, resource_server: &str, token_key: &str) -> Result<(), String> {
    ctx.request("POST /oauth2/introspect");
    let i = env
        .client
        .introspect(&ctx.basic(resource_server)?, ctx.get(token_key)?)
        .map_err(api)?;
    let claims = i.claims.filter(|_| i.active).ok_or("token is not active")?;
    ensure(claims.sub.kind == EntityKind::User && claims.typ == TokenType::Access, || {
        format!("expected a user access token, got {:?} for {}", claims.typ, claims.sub)
    })
}

/// The fake storage endpoint accepts only the credential it was set up with.
fn transfer(ctx: &mut Ctx, fetched_key: &str) -> Result<(), String> {
    ctx.request("storage endpoint: open session (in-process fake)");
    let got = ctx.get(fetched_key)?;
    let want = ctx.get("storage.expected")?;
    ensure(got == want, || "storage endpoint rejected the credential".into())
}

fn fetch_into(env: &Env, ctx: &mut Ctx, auth: Auth, cred_key: &str, out: &str) -> Result<(), String> {
    let cred = ctx.get(cred_key)?.to_string();
    ctx.request(format!("GET /api/v1/secrets/{{cred}} ({})", scheme_name(&auth)));
    let (_, payload, _) = env.client.fetch_secret(&auth, &cred).map_err(api)?;
    ctx.set(out, STANDARD.encode(payload));
    Ok(())
}

fn scheme_name(auth: &Auth) -> &'static str {
    match auth {
        Auth::Basic { .. } => "basic",
        Auth::Bearer(_) => "bearer",
        Auth::Operator(_) => "operator key",
        Auth::None => "anonymous",
    }
}

/// A user-owned SSH key for the fake storage endpoint. Records the owner's
/// setup token so the credential can be rewritten later.
fn storage_credential(env: &Env, ctx: &mut Ctx, tenant: &str, redirect: &str, persona: &str) -> Result<(), String> {
    sign_in(env, ctx, tenant, redirect, persona, "owner")?;
    let key = random_text("ssh-ed25519");
    let cred = env
        .client
        .store_secret(&ctx.bearer("owner.token")?, CredentialType::SshKey, key.as_bytes(), "storage endpoint key")
        .map_err(api)?;
    ctx.set("cred.token", cred);
    ctx.set("storage.expected", STANDARD.encode(key.as_bytes()));
    Ok(())
}

/// Server-side corruption: the owner replaces the stored credential, so
/// the copy the storage endpoint expects no longer matches.
fn rewrite_credential(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let cred = ctx.get("cred.token")?.to_string();
    let owner = ctx.bearer("owner.token")?;
    let (ctype, _, _) = env.client.fetch_secret(&owner, &cred).map_err(api)?;
    // keep the payload valid for its type
    let payload = match ctype {
        CredentialType::KvSet => encode_kv(&[("rotated".to_string(), random_text("rotated"))].into()),
        _ => random_text("rotated").into_bytes(),
    };
    env.client.update_secret(&owner, &cred, &payload).map(|_| ()).map_err(api)
}

fn revoke_share(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let cred = ctx.get("cred.token")?.to_string();
    env.client
        .revoke_share(&ctx.bearer("owner.token")?, &cred, &ctx.entity("share.grantee")?)
        .map_err(api)
}

// htrc-login: institution choice, IdP hint, federated login, tokens back

const HTRC_REDIRECT: &str = "https://analytics.htrc.example/callback";

fn htrc_login_setup(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.admin_tenant(env, "htrc", "HTRC Analytics Gateway", &[HTRC_REDIRECT])?;
    ctx.mock_idp(env, "htrc", "cilogon")?;
    ctx.mock_idp(env, "htrc", "hathitrust")?;
    let creds = ctx.basic("htrc")?;
    env.client.map_institution(&creds, "urn:inst:X", "cilogon").map_err(api)?;
    env.client.map_institution(&creds, "urn:inst:Y", "hathitrust").map_err(api)?;
    // bob's home institution sits behind the HathiTrust IdP
    ctx.set("user.name", "bob");
    ctx.set("user.institution", "urn:inst:Y");
    Ok(())
}

fn htrc_select_institution(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("GET /api/v1/institution-mappings");
    let mappings = env.client.list_institutions(&ctx.basic("htrc")?).map_err(api)?;
    let chosen = ctx.get("user.institution")?.to_string();
    let m = mappings
        .iter()
        .find(|m| m.entity_id == chosen)
        .ok_or_else(|| format!("{chosen} is not in the gateway's institution list"))?;
    ctx.set("login.entity_id", &m.entity_id);
    ctx.set("login.hint", &m.alias);
    Ok(())
}

fn htrc_send_hint(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("GET /oauth2/authorize?idp_hint&entity_id");
    let q = AuthorizeQuery {
        client_id: ctx.get("htrc.client_id")?.to_string(),
        redirect_uri: HTRC_REDIRECT.to_string(),
        idp_hint: Some(ctx.get("login.hint")?.to_string()),
        entity_id: Some(ctx.get("login.entity_id")?.to_string()),
        state: Some(format!("gw-{}", ctx.run)),
    };
    let location = env.client.authorize(&q).map_err(api)?;
    ctx.set("session.state", param(&location, "state")?);
    ctx.set("idp.url", location);
    Ok(())
}

fn htrc_forward_to_idp(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("302 Location to the external IdP");
    let url = ctx.get("idp.url")?.to_string();
    let hint = ctx.get("login.hint")?.to_string();
    ensure(without_query(&url)? == ctx.get(&format!("idp.{hint}.authorize"))?, || {
        format!("redirect goes to {url}, not the {hint} IdP")
    })?;
    ensure(param(&url, "client_id")? == ctx.get(&format!("idp.{hint}.broker"))?, || {
        "redirect does not carry the broker's client id for the hinted IdP".into()
    })?;
    let entity = param(&url, "idphint")?;
    ensure(entity == ctx.get("login.entity_id")?, || format!("entityID {entity} was not forwarded"))
}

fn idp_url(ctx: &Ctx) -> Result<String, String> {
    with_param(ctx.get("idp.url")?, "state", ctx.get("session.state")?)
}

fn htrc_login_page(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("GET IdP authorize (login page)");
    let page = env.client.page(&idp_url(ctx)?).map_err(api)?;
    ensure(page.contains("name=\"password\""), || "IdP did not show a login form".into())?;
    let entity = ctx.get("login.entity_id")?.to_string();
    ensure(page.contains(&entity), || "login page lost the institution's entityID".into())
}

fn htrc_authenticate(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("GET IdP authorize with username and password");
    let user = ctx.get("user.name")?.to_string();
    let callback = env.client.idp_login(&idp_url(ctx)?, &user, &format!("{user}-pw")).map_err(api)?;
    ctx.set("idp.code", param(&callback, "code")?);
    ctx.set("callback.url", without_query(&callback)?);
    Ok(())
}

fn htrc_idp_response(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("GET /oauth2/callback?code&state");
    let mut url = Url::parse(ctx.get("callback.url")?).map_err(|e| e.to_string())?;
    url.query_pairs_mut()
        .append_pair("code", ctx.get("idp.code")?)
        .append_pair("state", ctx.get("session.state")?);
    let back = env.client.follow(url.as_str()).map_err(api)?;
    ensure(without_query(&back)? == HTRC_REDIRECT, || format!("broker sent the browser to {back}"))?;
    if let Ok(err) = param(&back, "error") {
        return Err(format!("broker returned error {err}"));
    }
    ensure(param(&back, "state")? == format!("gw-{}", ctx.run), || "gateway state was not echoed".into())?;
    ctx.set("login.code", param(&back, "code")?);
    Ok(())
}

fn htrc_tokens(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("POST /oauth2/token grant_type=authorization_code");
    let r = env
        .client
        .redeem_code(&ctx.basic("htrc")?, ctx.get("login.code")?, HTRC_REDIRECT)
        .map_err(api)?;
    ensure(r.tokens.id_token.is_some() && r.tokens.refresh_token.is_some(), || {
        "authentication response lacks id or refresh token".into()
    })?;
    let users = env.client.list_users(&ctx.basic("htrc")?).map_err(api)?;
    let user = users
        .iter()
        .find(|u| u.user_id == r.user_id)
        .ok_or("logged-in user is not registered in the tenant")?;
    ensure(user.email.ends_with("@inst-y.edu"), || format!("unexpected identity {}", user.email))
}

pub static HTRC_LOGIN: Scenario = Scenario {
    name: "htrc-login",
    setup: htrc_login_setup,
    steps: &[
        Step { description: "User selects an institution at the gateway", run: htrc_select_institution },
        Step { description: "Gateway sends the login request with IdP hint and entityID", run: htrc_send_hint },
        Step { description: "Broker sends the request to the external IdP with the entityID", run: htrc_forward_to_idp },
        Step { description: "External IdP shows the institution's login page", run: htrc_login_page },
        Step { description: "User authenticates with institutional credentials", run: htrc_authenticate },
        Step { description: "External IdP returns the authentication response to the broker", run: htrc_idp_response },
        Step { description: "Broker returns the authentication response and tokens to the gateway", run: htrc_tokens },
    ],
    artifacts: &[
        Artifact { name: "htrc.secret", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "session.state", produced_by: 2, consumed_by: 6, corruption: Corruption::Tamper },
        Artifact { name: "idp.code", produced_by: 5, consumed_by: 6, corruption: Corruption::Tamper },
        Artifact { name: "login.code", produced_by: 6, consumed_by: 7, corruption: Corruption::Tamper },
    ],
};

// htrc-capsule: service account per capsule, token service on the host

fn capsule_setup(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.admin_tenant(env, "htrc", "HTRC Analytics Gateway", &[HTRC_REDIRECT])?;
    ctx.mock_idp(env, "htrc", "cilogon")?;
    sign_in(env, ctx, "htrc", HTRC_REDIRECT, "alice", "user")
}

fn capsule_request(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    check_user_token(env, ctx, "htrc", "user.token")
}

fn capsule_create(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("Data Capsule API: create (in-process fake)");
    let id = format!("dc-{:08x}", rand::rng().random::<u32>());
    let owner = ctx.get("user.user")?.to_string();
    ctx.set("capsule.id", &id);
    ctx.set("capsule.owner", owner);
    ctx.set("capsule.ip", format!("10.0.{}.{}", rand::rng().random::<u8>(), rand::rng().random_range(2..250u8)));
    Ok(())
}

fn capsule_deploy(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("Data Capsule service: deploy on host (in-process fake)");
    let id = ctx.get("capsule.id")?.to_string();
    let ip = ctx.get("capsule.ip")?.to_string();
    ctx.set("host.capsule", id);
    ctx.set("host.ip", ip);
    ctx.set("capsule.mode", "secure");
    Ok(())
}

fn capsule_service_account(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("POST /api/v1/service-accounts");
    let capsule = ctx.get("capsule.id")?.to_string();
    let sa = NewServiceAccount {
        name: capsule.clone(),
        roles: vec!["capsule".into()],
        attributes: [("capsule_id".to_string(), capsule)].into(),
    };
    let created = env.client.register_service_account(&ctx.basic("htrc")?, &sa).map_err(api)?;
    // written into the capsule's configuration in the capsule registry
    ctx.set("sa.id", created.id);
    ctx.set("config.client_id", created.client_id);
    ctx.set("config.client_secret", created.client_secret);
    Ok(())
}

fn capsule_connect(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("WorksetToolkit: download volumes (in-process fake)");
    ensure(ctx.get("capsule.mode")? == "secure", || "capsule is not in secure mode".into())?;
    ensure(ctx.get("capsule.owner")? == ctx.get("user.user")?, || "user does not own the capsule".into())?;
    ctx.set("request.capsule", ctx.get("capsule.id")?.to_string());
    ctx.set("request.ip", ctx.get("capsule.ip")?.to_string());
    Ok(())
}

fn capsule_token_service(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("host token service: validate capsule ID and internal IP (in-process fake)");
    ensure(ctx.get("request.capsule")? == ctx.get("host.capsule")?, || "unknown capsule ID".into())?;
    ensure(ctx.get("request.ip")? == ctx.get("host.ip")?, || "request did not come from the capsule's internal IP".into())
}

fn capsule_token_request(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("POST /oauth2/token grant_type=client_credentials");
    let creds = Auth::basic(ctx.get("config.client_id")?, ctx.get("config.client_secret")?);
    let t = env.client.client_credentials(&creds).map_err(api)?;
    let id_token = t.id_token.ok_or("token response has no id_token")?;
    ctx.set("capsule.id_token", id_token);
    Ok(())
}

fn capsule_data_api(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("Data API with id_token; POST /oauth2/introspect");
    let i = env
        .client
        .introspect(&ctx.basic("htrc")?, ctx.get("capsule.id_token")?)
        .map_err(api)?;
    let claims = i.claims.filter(|_| i.active).ok_or("Data API rejected the id_token")?;
    ensure(claims.typ == TokenType::Id && claims.sub.kind == EntityKind::ServiceAccount, || {
        format!("id_token names {} ({:?})", claims.sub, claims.typ)
    })?;
    ensure(claims.sub.local_id.to_string() == ctx.get("sa.id")?, || "id_token is for another capsule".into())
}

fn delete_capsule_account(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let id = tenet_core::id::OpaqueId::parse(ctx.get("sa.id")?).map_err(|e| e.to_string())?;
    env.client.delete_service_account(&ctx.basic("htrc")?, &id).map_err(api)
}

pub static HTRC_CAPSULE: Scenario = Scenario {
    name: "htrc-capsule",
    setup: capsule_setup,
    steps: &[
        Step { description: "Authenticated user asks the gateway to create a Data Capsule", run: capsule_request },
        Step { description: "Gateway creates the capsule through the Data Capsule API", run: capsule_create },
        Step { description: "Data Capsule service deploys the capsule on the host", run: capsule_deploy },
        Step { description: "Gateway registers a service account for the capsule", run: capsule_service_account },
        Step { description: "User connects in secure mode and requests volumes", run: capsule_connect },
        Step { description: "Capsule asks the host token service, which checks capsule ID and IP", run: capsule_token_service },
        Step { description: "Token service sends a client credentials token request", run: capsule_token_request },
        Step { description: "WorksetToolkit calls the Data API with the id_token", run: capsule_data_api },
    ],
    artifacts: &[
        Artifact { name: "user.token", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "htrc.secret", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "config.client_secret", produced_by: 4, consumed_by: 7, corruption: Corruption::Tamper },
        Artifact { name: "service-account", produced_by: 4, consumed_by: 7, corruption: Corruption::Server(delete_capsule_account) },
        Artifact { name: "capsule.id_token", produced_by: 7, consumed_by: 8, corruption: Corruption::Tamper },
    ],
};

// mft-agent: the agent fetches with its own token

const PORTAL_REDIRECT: &str = "https://portal.gateway.example/callback";

fn agent_setup(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.admin_tenant(env, "airavata", "Airavata Gateway", &[PORTAL_REDIRECT])?;
    ctx.mock_idp(env, "airavata", "cilogon")?;
    let agent = env.client.register_agent(&ctx.basic("airavata")?).map_err(api)?;
    let tenant = tenet_core::id::OpaqueId::parse(ctx.get("airavata.id")?).map_err(|e| e.to_string())?;
    ctx.set("agent.id", &agent.id);
    ctx.set("agent.client_id", agent.client_id);
    ctx.set("agent.secret", agent.client_secret);
    ctx.set("share.grantee", tenet_core::id::EntityRef::agent(&tenant, &agent.id));
    storage_credential(env, ctx, "airavata", PORTAL_REDIRECT, "carol")?;
    let cred = ctx.get("cred.token")?.to_string();
    env.client
        .share(&ctx.bearer("owner.token")?, &cred, &ctx.entity("share.grantee")?, Permission::Read)
        .map_err(api)
}

fn agent_sign_in(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    sign_in(env, ctx, "airavata", PORTAL_REDIRECT, "carol", "user")
}

fn agent_start_transfer(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    check_user_token(env, ctx, "airavata", "user.token")?;
    ctx.request("POST /oauth2/introspect; middleware sends the credential token to MFT");
    ctx.set("mft.cred", ctx.get("cred.token")?.to_string());
    Ok(())
}

fn agent_forward(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("MFT central service: forward to agent (in-process fake)");
    ctx.set("agent.inbox", ctx.get("mft.cred")?.to_string());
    Ok(())
}

fn agent_authenticate(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("POST /oauth2/token grant_type=client_credentials (agent)");
    let creds = Auth::basic(ctx.get("agent.client_id")?, ctx.get("agent.secret")?);
    let t = env.client.client_credentials(&creds).map_err(api)?;
    ensure(t.refresh_token.is_none() && t.id_token.is_none(), || "agent received more than an access token".into())?;
    ctx.set("agent.token", t.access_token);
    Ok(())
}

fn agent_fetch(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let auth = ctx.bearer("agent.token")?;
    fetch_into(env, ctx, auth, "agent.inbox", "agent.fetched")
}

fn agent_transfer(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    transfer(ctx, "agent.fetched")
}

fn delete_mft_agent(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let id = tenet_core::id::OpaqueId::parse(ctx.get("agent.id")?).map_err(|e| e.to_string())?;
    env.client.delete_agent(&ctx.basic("airavata")?, &id).map_err(api)
}

pub static MFT_AGENT: Scenario = Scenario {
    name: "mft-agent",
    setup: agent_setup,
    steps: &[
        Step { description: "User signs in through the gateway portal and receives tokens", run: agent_sign_in },
        Step { description: "User starts a transfer; middleware sends the credential token to MFT", run: agent_start_transfer },
        Step { description: "MFT central service forwards the credential token to the agent", run: agent_forward },
        Step { description: "Agent authenticates with the client credentials grant", run: agent_authenticate },
        Step { description: "Agent fetches the credential with its agent token", run: agent_fetch },
        Step { description: "Agent starts the transfer with the fetched credential", run: agent_transfer },
    ],
    artifacts: &[
        Artifact { name: "airavata.secret", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "user.token", produced_by: 1, consumed_by: 2, corruption: Corruption::Tamper },
        Artifact { name: "agent.secret", produced_by: 0, consumed_by: 4, corruption: Corruption::Tamper },
        Artifact { name: "agent-account", produced_by: 0, consumed_by: 4, corruption: Corruption::Server(delete_mft_agent) },
        Artifact { name: "cred.token", produced_by: 0, consumed_by: 5, corruption: Corruption::Tamper },
        Artifact { name: "agent.token", produced_by: 4, consumed_by: 5, corruption: Corruption::Tamper },
        Artifact { name: "share", produced_by: 0, consumed_by: 5, corruption: Corruption::Server(revoke_share) },
        Artifact { name: "secret", produced_by: 0, consumed_by: 6, corruption: Corruption::Server(rewrite_credential) },
    ],
};

// mft-delegated: trusted middleware fetches with its own credentials

fn delegated_setup(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.admin_tenant(env, "gateway", "Science Gateway", &[PORTAL_REDIRECT])?;
    ctx.mock_idp(env, "gateway", "cilogon")?;
    ctx.admin_tenant(env, "airavata", "Airavata Middleware", &[])?;
    ctx.set("share.grantee", ctx.get("airavata.entity")?.to_string());
    storage_credential(env, ctx, "gateway", PORTAL_REDIRECT, "carol")?;
    let cred = ctx.get("cred.token")?.to_string();
    env.client
        .share(&ctx.bearer("owner.token")?, &cred, &ctx.entity("share.grantee")?, Permission::Read)
        .map_err(api)
}

fn delegated_sign_in(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    sign_in(env, ctx, "gateway", PORTAL_REDIRECT, "carol", "user")
}

fn delegated_check(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    check_user_token(env, ctx, "airavata", "user.token")
}

fn delegated_forward(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("middleware to MFT: transfer request (in-process fake)");
    ctx.set("mft.cred", ctx.get("cred.token")?.to_string());
    Ok(())
}

fn delegated_fetch(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let auth = ctx.basic("airavata")?;
    fetch_into(env, ctx, auth, "mft.cred", "mft.fetched")
}

fn delegated_transfer(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    transfer(ctx, "mft.fetched")
}

pub static MFT_DELEGATED: Scenario = Scenario {
    name: "mft-delegated",
    setup: delegated_setup,
    steps: &[
        Step { description: "User signs in through the gateway and receives tokens", run: delegated_sign_in },
        Step { description: "Middleware checks the user token with the broker", run: delegated_check },
        Step { description: "Middleware forwards the transfer request and credential token to MFT", run: delegated_forward },
        Step { description: "MFT fetches the credential with the middleware's credentials", run: delegated_fetch },
        Step { description: "MFT hands the credential to an agent, which starts the transfer", run: delegated_transfer },
    ],
    artifacts: &[
        Artifact { name: "gateway.secret", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "user.token", produced_by: 1, consumed_by: 2, corruption: Corruption::Tamper },
        Artifact { name: "airavata.secret", produced_by: 0, consumed_by: 2, corruption: Corruption::Tamper },
        Artifact { name: "cred.token", produced_by: 0, consumed_by: 4, corruption: Corruption::Tamper },
        Artifact { name: "share", produced_by: 0, consumed_by: 4, corruption: Corruption::Server(revoke_share) },
        Artifact { name: "secret", produced_by: 0, consumed_by: 5, corruption: Corruption::Server(rewrite_credential) },
    ],
};

// mft-user: the user's own token, passed through untouched

fn user_setup(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.admin_tenant(env, "gateway", "Science Gateway", &[PORTAL_REDIRECT])?;
    ctx.mock_idp(env, "gateway", "cilogon")?;
    ctx.admin_tenant(env, "airavata", "Airavata Middleware", &[])?;
    storage_credential(env, ctx, "gateway", PORTAL_REDIRECT, "carol")?;
    let cred = ctx.get("cred.token")?.to_string();
    let shares = env.client.list_shares(&ctx.bearer("owner.token")?, &cred).map_err(api)?;
    ensure(shares.is_empty(), || "the credential must not be shared with anyone".into())
}

fn user_sign_in(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    sign_in(env, ctx, "gateway", PORTAL_REDIRECT, "carol", "user")
}

fn user_pass_through(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("middleware to MFT: user token and credential token, opaque (in-process fake)");
    ctx.set("mft.token", ctx.get("user.token")?.to_string());
    ctx.set("mft.cred", ctx.get("cred.token")?.to_string());
    Ok(())
}

fn user_fetch(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let auth = ctx.bearer("mft.token")?;
    fetch_into(env, ctx, auth, "mft.cred", "mft.fetched")
}

fn user_transfer(_: &Env, ctx: &mut Ctx) -> Result<(), String> {
    transfer(ctx, "mft.fetched")
}

pub static MFT_USER: Scenario = Scenario {
    name: "mft-user",
    setup: user_setup,
    steps: &[
        Step { description: "User signs in through the gateway and receives tokens", run: user_sign_in },
        Step { description: "Middleware passes the user token and credential token to MFT", run: user_pass_through },
        Step { description: "MFT fetches the credential with the user's token", run: user_fetch },
        Step { description: "MFT hands the credential to an agent, which starts the transfer", run: user_transfer },
    ],
    artifacts: &[
        Artifact { name: "gateway.secret", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "user.token", produced_by: 1, consumed_by: 3, corruption: Corruption::Tamper },
        Artifact { name: "cred.token", produced_by: 0, consumed_by: 3, corruption: Corruption::Tamper },
        Artifact { name: "secret", produced_by: 0, consumed_by: 4, corruption: Corruption::Server(rewrite_credential) },
    ],
};

// galaxy-federation: two instances of one tenant see the same secret

const GALAXY_A: &str = "https://usegalaxy.org/authnz/callback";
const GALAXY_B: &str = "https://usegalaxy.eu/authnz/callback";

fn galaxy_setup(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.admin_tenant(env, "galaxy", "Galaxy", &[GALAXY_A, GALAXY_B])?;
    ctx.mock_idp(env, "galaxy", "cilogon")
}

fn galaxy_sign_in_a(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    sign_in(env, ctx, "galaxy", GALAXY_A, "dave", "a")
}

fn galaxy_store(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("POST /api/v1/secrets (first instance)");
    let mut kv = std::collections::BTreeMap::new();
    kv.insert("service".to_string(), "external-compute".to_string());
    kv.insert("api_key".to_string(), random_text("key"));
    let payload = tenet_core::vault::encode_kv(&kv);
    let cred = env
        .client
        .store_secret(&ctx.bearer("a.token")?, CredentialType::KvSet, &payload, "external service key")
        .map_err(api)?;
    ctx.set("cred.token", cred);
    ctx.set("secret.value", STANDARD.encode(&payload));
    // kept so the secret can be rewritten from outside the scenario
    ctx.set("owner.token", ctx.get("a.token")?.to_string());
    Ok(())
}

fn galaxy_sign_in_b(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    sign_in(env, ctx, "galaxy", GALAXY_B, "dave", "b")?;
    ensure(ctx.get("a.user")? == ctx.get("b.user")?, || "the second instance sees a different user".into())
}

fn galaxy_list(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    ctx.request("GET /api/v1/secrets (second instance)");
    let listed = env.client.list_secrets(&ctx.bearer("b.token")?).map_err(api)?;
    let cred = ctx.get("cred.token")?;
    ensure(listed.iter().any(|m| m.credential_token.to_string() == cred), || {
        "the second instance cannot see the stored secret".into()
    })
}

fn galaxy_fetch(env: &Env, ctx: &mut Ctx) -> Result<(), String> {
    let auth = ctx.bearer("b.token")?;
    fetch_into(env, ctx, auth, "cred.token", "b.fetched")?;
    ensure(ctx.get("b.fetched")? == ctx.get("secret.value")?, || "the instances disagree on the secret".into())
}

pub static GALAXY_FEDERATION: Scenario = Scenario {
    name: "galaxy-federation",
    setup: galaxy_setup,
    steps: &[
        Step { description: "User signs in at the first Galaxy instance", run: galaxy_sign_in_a },
        Step { description: "First instance stores the user's secret in the vault", run: galaxy_store },
        Step { description: "User signs in at the second Galaxy instance with the same identity", run: galaxy_sign_in_b },
        Step { description: "Second instance lists the user's secrets and finds the credential", run: galaxy_list },
        Step { description: "Second instance retrieves the identical secret", run: galaxy_fetch },
    ],
    artifacts: &[
        Artifact { name: "galaxy.secret", produced_by: 0, consumed_by: 1, corruption: Corruption::Tamper },
        Artifact { name: "a.token", produced_by: 1, consumed_by: 2, corruption: Corruption::Tamper },
        Artifact { name: "cred.token", produced_by: 2, consumed_by: 4, corruption: Corruption::Tamper },
        Artifact { name: "b.token", produced_by: 3, consumed_by: 4, corruption: Corruption::Tamper },
        Artifact { name: "secret", produced_by: 2, consumed_by: 5, corruption: Corruption::Server(rewrite_credential) },
    ],
};
