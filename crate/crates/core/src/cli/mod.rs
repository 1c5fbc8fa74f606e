//! The `attestchain` command line. Every command prints one canonical JSON
//! document on stdout; failures print `{"error":{...}}` and exit nonzero.

mod commands;
mod context;
mod demo;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::registry::Role;

pub use context::{CliError, CliProfile, Profiles};

#[derive(Debug, Parser)]
#[command(name = "attestchain", version, about = "Document attestation ledger client and gateway")]
pub struct Cli {
    /// Named profile from ~/.attestchain/profiles.json.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub service_url: Option<String>,
    /// Encrypted wallet holding this operator's identity.
    #[arg(long, global = true)]
    pub wallet: Option<PathBuf>,
    #[arg(long, global = true)]
    pub passphrase_file: Option<PathBuf>,
    /// Print nothing but the JSON result.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Queue mutations locally instead of sending them.
    #[arg(long, global = true)]
    pub offline: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(subcommand)]
    Identity(IdentityCmd),
    #[command(subcommand)]
    Request(RequestCmd),
    #[command(subcommand)]
    Step(StepCmd),
    /// Issue the aggregate credential once every phase is complete.
    Finalize { request_id: String },
    /// Revoke a finalized attestation, or one credential with --credential.
    Revoke(RevokeArgs),
    #[command(subcommand)]
    Chain(ChainCmd),
    #[command(subcommand)]
    Wallet(WalletCmd),
    #[command(subcommand)]
    Message(MessageCmd),
    #[command(subcommand)]
    Present(PresentCmd),
    #[command(subcommand)]
    Offline(OfflineCmd),
    #[command(subcommand)]
    Expire(ExpireCmd),
    #[command(subcommand)]
    Demo(DemoCmd),
    /// Run the gateway.
    Serve {
        #[arg(long, default_value = "config/service.json")]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RoleArg {
    Holder,
    AttestingEntity,
    CredentialIssuer,
    Verifier,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Holder => Role::Holder,
            RoleArg::AttestingEntity => Role::AttestingEntity,
            RoleArg::CredentialIssuer => Role::CredentialIssuer,
            RoleArg::Verifier => Role::Verifier,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum IdentityCmd {
    /// Generate keys into a new wallet; with --profile, also save the profile.
    Create {
        /// Argon2 memory cost for the wallet file.
        #[arg(long, default_value_t = 19 * 1024, hide = true)]
        kdf_memory_kib: u32,
        #[arg(long, default_value_t = 2, hide = true)]
        kdf_iterations: u32,
    },
    /// Publish the wallet's DID document.
    Register {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        service_endpoint: Option<String>,
        /// Wallet of an authority vouching for a privileged registration.
        #[arg(long)]
        sponsor_wallet: Option<PathBuf>,
        #[arg(long, requires = "sponsor_wallet")]
        sponsor_passphrase_file: Option<PathBuf>,
    },
    /// Print the wallet's DID.
    Show,
}

#[derive(Debug, Subcommand)]
pub enum RequestCmd {
    Submit {
        document_id: String,
        #[arg(long)]
        destination: String,
        #[arg(long)]
        template: Option<String>,
    },
    /// Public timeline; needs no identity.
    Status {
        document_id: String,
        #[arg(long)]
        destination: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StepCmd {
    Record {
        request_id: String,
        #[arg(long)]
        phase: u32,
        /// Whitelisted claim as key=value; repeatable.
        #[arg(long = "claim")]
        claims: Vec<String>,
        #[arg(long = "policy-ref")]
        policy_refs: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct RevokeArgs {
    #[arg(required_unless_present = "credential", conflicts_with = "credential")]
    pub request_id: Option<String>,
    #[arg(long, requires = "request_id")]
    pub reason: Option<String>,
    #[arg(long)]
    pub credential: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ChainCmd {
    Show {
        document_id: String,
        #[arg(long)]
        destination: Option<String>,
    },
    /// Check hashes, links, signatures and event order of every chain.
    Verify {
        document_id: String,
        #[arg(long)]
        destination: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum WalletCmd {
    /// Pull the inbox and list pending offers.
    Offers,
    Accept { offer_id: String },
    Reject { offer_id: String },
    /// Accepted credentials and the audit log.
    List,
}

#[derive(Debug, Subcommand)]
pub enum MessageCmd {
    Send {
        recipient: String,
        #[arg(long)]
        body: String,
    },
    /// Pull the inbox and print received messages.
    Read,
}

#[derive(Debug, Subcommand)]
pub enum PresentCmd {
    /// A fresh nonce for a verifier to hand to a holder.
    Challenge,
    Create {
        #[arg(long)]
        nonce: String,
        #[arg(long = "credential", required = true)]
        credentials: Vec<String>,
        #[arg(long)]
        verifier: Option<String>,
    },
    /// Verify a presentation read from --file or stdin.
    Verify {
        #[arg(long)]
        nonce: String,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OfflineCmd {
    /// Entries queued and not yet flushed.
    List,
    Flush,
}

#[derive(Debug, Subcommand)]
pub enum ExpireCmd {
    Sweep,
}

#[derive(Debug, Subcommand)]
pub enum DemoCmd {
    /// Scripted five-phase scenario against a throwaway local gateway.
    Run {
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

/// Parse arguments, run, print. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let message = e.render().to_string();
            context::print_error(&CliError::new("UsageError", message.trim()));
            return 2;
        }
    };
    if !cli.quiet {
        let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).try_init();
    }
    match commands::run(&cli) {
        Ok(value) => {
            context::print_json(&value);
            0
        }
        Err(e) => {
            context::print_error(&e);
            1
        }
    }
}
