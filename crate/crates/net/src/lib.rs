//! Live implementations of the transport traits: the system resolver, a
//! rustls connector that reports the leaf certificate's SPKI digest, and
//! ureq-based HTTP clients for portal checks and WIGLE queries.

use std::io::Read;
use std::net::{IpAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{verify_tls12_signature, verify_tls13_signature, CryptoProvider};
use rustls::pki_types::{CertificateDer, ServerName, UnixTime};
use rustls::{ClientConfig, ClientConnection, DigitallySignedStruct, SignatureScheme};
use sha2::{Digest, Sha256};
use wificue_core::probe::{HttpFetcher, Resolver, SpkiConnector};
use wificue_core::transport::{HttpResponse, HttpTransport, TransportError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Resolves through the operating system, i.e. the connected network's DNS.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemResolver;

impl Resolver for SystemResolver {
    fn resolve(&self, domain: &str) -> Result<Vec<IpAddr>, TransportError> {
        let addrs = (domain, 0u16)
            .to_socket_addrs()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(addrs.map(|a| a.ip()).collect())
    }
}

/// Accepts any chain; pinning is judged by the caller from the SPKI digest.
/// Handshake signatures are still verified, so the peer must hold the key.
#[derive(Debug)]
struct PinOnlyVerifier(Arc<CryptoProvider>);

impl ServerCertVerifier for PinOnlyVerifier {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.0.signature_verification_algorithms.supported_schemes()
    }
}

/// SHA-256 of the DER SubjectPublicKeyInfo of a certificate.
pub fn spki_sha256(cert_der: &[u8]) -> Result<[u8; 32], TransportError> {
    let (_, cert) = x509_parser::parse_x509_certificate(cert_der)
        .map_err(|e| TransportError::Other(format!("unparseable certificate: {e}")))?;
    Ok(Sha256::digest(cert.tbs_certificate.subject_pki.raw).into())
}

/// Base64 form used in pin sets.
pub fn pin_string(digest: &[u8; 32]) -> String {
    B64.encode(digest)
}

#[derive(Debug, Clone)]
pub struct TlsSpkiConnector {
    config: Arc<ClientConfig>,
    timeout: Duration,
}

impl TlsSpkiConnector {
    pub fn new(timeout: Duration) -> Self {
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let config = ClientConfig::builder_with_provider(provider.clone())
            .with_safe_default_protocol_versions()
            .expect("ring provider supports the default protocol versions")
            .dangerous()
            .with_custom_certificate_verifier(Arc::new(PinOnlyVerifier(provider)))
            .with_no_client_auth();
        TlsSpkiConnector {
            config: Arc::new(config),
            timeout,
        }
    }
}

impl Default for TlsSpkiConnector {
    fn default() -> Self {
        TlsSpkiConnector::new(DEFAULT_TIMEOUT)
    }
}

fn connect(host: &str, port: u16, timeout: Duration) -> Result<TcpStream, TransportError> {
    let addrs = (host, port)
        .to_socket_addrs()
        .map_err(|e| TransportError::Connect(e.to_string()))?;
    let mut last = TransportError::Connect(format!("{host}: no addresses"));
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(sock) => {
                sock.set_read_timeout(Some(timeout))
                    .and_then(|_| sock.set_write_timeout(Some(timeout)))
                    .map_err(|e| TransportError::Connect(e.to_string()))?;
                return Ok(sock);
            }
            Err(e) if e.kind() == std::io::ErrorKind::TimedOut => last = TransportError::Timeout,
            Err(e) => last = TransportError::Connect(e.to_string()),
        }
    }
    Err(last)
}

impl SpkiConnector for TlsSpkiConnector {
    fn spki_sha256(&self, host: &str, port: u16) -> Result<[u8; 32], TransportError> {
        let name = ServerName::try_from(host.to_string())
            .map_err(|e| TransportError::Other(format!("invalid server name: {e}")))?;
        let mut conn = ClientConnection::new(self.config.clone(), name)
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let mut sock = connect(host, port, self.timeout)?;
        while conn.is_handshaking() {
            conn.complete_io(&mut sock).map_err(|e| match e.kind() {
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => TransportError::Timeout,
                _ => TransportError::Connect(e.to_string()),
            })?;
        }
        let leaf = conn
            .peer_certificates()
            .and_then(|chain| chain.first())
            .ok_or_else(|| TransportError::Other("server sent no certificate".into()))?;
        spki_sha256(leaf.as_ref())
    }
}

fn agent(timeout: Duration, max_redirects: u32) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .max_redirects(max_redirects)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        ureq::Error::Io(io) => TransportError::Connect(io.to_string()),
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => TransportError::Connect(e.to_string()),
        other => TransportError::Other(other.to_string()),
    }
}

fn read_response(mut resp: ureq::http::Response<ureq::Body>) -> Result<HttpResponse, TransportError> {
    let status = resp.status().as_u16();
    let mut body = String::new();
    resp.body_mut()
        .as_reader()
        .read_to_string(&mut body)
        .map_err(|e| TransportError::Other(format!("reading body: {e}")))?;
    Ok(HttpResponse { status, body })
}

/// Plain HTTP GET that returns redirects instead of following them.
#[derive(Debug, Clone)]
pub struct NoRedirectFetcher {
    agent: ureq::Agent,
}

impl NoRedirectFetcher {
    pub fn new(timeout: Duration) -> Self {
        NoRedirectFetcher {
            agent: agent(timeout, 0),
        }
    }
}

impl Default for NoRedirectFetcher {
    fn default() -> Self {
        NoRedirectFetcher::new(DEFAULT_TIMEOUT)
    }
}

impl HttpFetcher for NoRedirectFetcher {
    fn fetch(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let resp = self.agent.get(url).call().map_err(map_ureq_error)?;
        read_response(resp)
    }
}

/// HTTP client for WIGLE API calls.
#[derive(Debug, Clone)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: agent(timeout, 5),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport::new(DEFAULT_TIMEOUT)
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, basic_auth: Option<(&str, &str)>) -> Result<HttpResponse, TransportError> {
        let mut req = self.agent.get(url).header("Accept", "application/json");
        if let Some((name, token)) = basic_auth {
            let credentials = B64.encode(format!("{name}:{token}"));
            req = req.header("Authorization", format!("Basic {credentials}"));
        }
        read_response(req.call().map_err(map_ureq_error)?)
    }
}

/// POST a JSON document, optionally with a bearer token.
pub fn post_json(
    url: &str,
    body: &str,
    bearer: Option<&str>,
    timeout: Duration,
) -> Result<HttpResponse, TransportError> {
    let mut req = agent(timeout, 0)
        .post(url)
        .header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    read_response(req.send(body).map_err(map_ureq_error)?)
}
