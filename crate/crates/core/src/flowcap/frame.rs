//! Minimal Ethernet / IPv4 / transport header parsing and flow keys.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FlowcapError;

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_MIN_HEADER_LEN: usize = 20;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;

pub const IPPROTO_ICMP: u8 = 1;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

const HTTP_PORT: u16 = 80;

pub fn ethertype(frame: &[u8]) -> Option<u16> {
    (frame.len() >= ETH_HEADER_LEN).then(|| u16::from_be_bytes([frame[12], frame[13]]))
}

/// Header fields needed for flow identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Summary {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    /// Present for unfragmented (or first-fragment) TCP/UDP with a full port pair.
    pub ports: Option<(u16, u16)>,
}

impl Ipv4Summary {
    pub fn parse(frame: &[u8]) -> Result<Self, FlowcapError> {
        let et = ethertype(frame).ok_or(FlowcapError::TooShort { len: frame.len() })?;
        if et != ETHERTYPE_IPV4 {
            return Err(FlowcapError::NotIpv4 { ethertype: et });
        }
        let ip = &frame[ETH_HEADER_LEN..];
        if ip.len() < IPV4_MIN_HEADER_LEN {
            return Err(FlowcapError::TooShort { len: frame.len() });
        }
        if ip[0] >> 4 != 4 {
            return Err(FlowcapError::NotIpv4 { ethertype: et });
        }
        let ihl = usize::from(ip[0] & 0x0f) * 4;
        if ihl < IPV4_MIN_HEADER_LEN || ip.len() < ihl {
            return Err(FlowcapError::TooShort { len: frame.len() });
        }
        let protocol = ip[9];
        let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
        let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
        let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
        let l4 = &ip[ihl..];
        let ports = if frag_offset == 0
            && (protocol == IPPROTO_TCP || protocol == IPPROTO_UDP)
            && l4.len() >= 4
        {
            Some((
                u16::from_be_bytes([l4[0], l4[1]]),
                u16::from_be_bytes([l4[2], l4[3]]),
            ))
        } else {
            None
        };
        Ok(Self {
            src,
            dst,
            protocol,
            ports,
        })
    }

    pub fn proto(&self) -> Proto {
        match self.protocol {
            IPPROTO_TCP => match self.ports {
                Some((a, b)) if a == HTTP_PORT || b == HTTP_PORT => Proto::Http,
                _ => Proto::Tcp,
            },
            IPPROTO_UDP => Proto::Udp,
            IPPROTO_ICMP => Proto::Icmp,
            other => Proto::Other(other),
        }
    }
}

/// Protocol selector of a flow key. HTTP means TCP with port 80 on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Proto {
    Http,
    Tcp,
    Udp,
    Icmp,
    Other(u8),
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proto::Http => f.write_str("http"),
            Proto::Tcp => f.write_str("tcp"),
            Proto::Udp => f.write_str("udp"),
            Proto::Icmp => f.write_str("icmp"),
            Proto::Other(n) => write!(f, "ip{n}"),
        }
    }
}

impl FromStr for Proto {
    type Err = FlowcapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "http" => Proto::Http,
            "tcp" => Proto::Tcp,
            "udp" => Proto::Udp,
            "icmp" => Proto::Icmp,
            _ => s
                .strip_prefix("ip")
                .and_then(|n| n.parse().ok())
                .map(Proto::Other)
                .ok_or_else(|| FlowcapError::BadFlowKey(s.to_string()))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowVariant {
    /// IP pair + protocol; ports ignored.
    #[default]
    #[serde(rename = "3-tuple")]
    ThreeTuple,
    /// IP pair + port pair + protocol.
    #[serde(rename = "5-tuple")]
    FiveTuple,
}

/// Direction-independent flow key.
///
/// Endpoints are ordered so that `ip_lo <= ip_hi` (ties broken by port); in
/// the 5-tuple variant `port_lo` belongs to the `ip_lo` endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub ip_lo: Ipv4Addr,
    pub ip_hi: Ipv4Addr,
    pub proto: Proto,
    pub ports: Option<(u16, u16)>,
}

impl FlowKey {
    pub fn from_summary(s: &Ipv4Summary, variant: FlowVariant) -> Self {
        let proto = s.proto();
        match variant {
            FlowVariant::ThreeTuple => {
                let (ip_lo, ip_hi) = if s.src <= s.dst {
                    (s.src, s.dst)
                } else {
                    (s.dst, s.src)
                };
                Self {
                    ip_lo,
                    ip_hi,
                    proto,
                    ports: None,
                }
            }
            FlowVariant::FiveTuple => {
                let (sp, dp) = s.ports.unwrap_or((0, 0));
                let a = (s.src, sp);
                let b = (s.dst, dp);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                Self {
                    ip_lo: lo.0,
                    ip_hi: hi.0,
                    proto,
                    ports: Some((lo.1, hi.1)),
                }
            }
        }
    }

    pub fn variant(&self) -> FlowVariant {
        if self.ports.is_some() {
            FlowVariant::FiveTuple
        } else {
            FlowVariant::ThreeTuple
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ports {
            None => write!(f, "{}-{}/{}", self.ip_lo, self.ip_hi, self.proto),
            Some((a, b)) => write!(
                f,
                "{}:{}-{}:{}/{}",
                self.ip_lo, a, self.ip_hi, b, self.proto
            ),
        }
    }
}

impl FromStr for FlowKey {
    type Err = FlowcapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FlowcapError::BadFlowKey(s.to_string());
        let (pair, proto) = s.rsplit_once('/').ok_or_else(bad)?;
        let proto: Proto = proto.parse()?;
        let (lo, hi) = pair.split_once('-').ok_or_else(bad)?;
        let endpoint = |e: &str| -> Result<(Ipv4Addr, Option<u16>), FlowcapError> {
            match e.split_once(':') {
                Some((ip, port)) => Ok((
                    ip.parse().map_err(|_| bad())?,
                    Some(port.parse().map_err(|_| bad())?),
                )),
                None => Ok((e.parse().map_err(|_| bad())?, None)),
            }
        };
        let (ip_lo, plo) = endpoint(lo)?;
        let (ip_hi, phi) = endpoint(hi)?;
        let ports = match (plo, phi) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(bad()),
        };
        Ok(Self {
            ip_lo,
            ip_hi,
            proto,
            ports,
        })
    }
}

impl Serialize for FlowKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FlowKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Built-in packet predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketFilter {
    Http,
    Arp,
    Icmp,
    #[default]
    All,
}

impl PacketFilter {
    pub fn matches(self, frame: &[u8]) -> bool {
        match self {
            PacketFilter::All => true,
            PacketFilter::Arp => ethertype(frame) == Some(ETHERTYPE_ARP),
            PacketFilter::Http => {
                matches!(Ipv4Summary::parse(frame), Ok(s) if s.proto() == Proto::Http)
            }
            PacketFilter::Icmp => {
                matches!(Ipv4Summary::parse(frame), Ok(s) if s.protocol == IPPROTO_ICMP)
            }
        }
    }
}

impl FromStr for PacketFilter {
    type Err = FlowcapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "http" => Ok(Self::Http),
            "arp" => Ok(Self::Arp),
            "icmp" => Ok(Self::Icmp),
            "all" => Ok(Self::All),
            _ => Err(FlowcapError::UnknownFilter(s.to_string())),
        }
    }
}

impl fmt::Display for PacketFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Http => "http",
            Self::Arp => "arp",
            Self::Icmp => "icmp",
            Self::All => "all",
        })
    }
}

/// Builds an Ethernet + IPv4 + TCP/UDP/ICMP frame. Checksums are left zero.
///
/// Used by the synthetic capture writer and by tests.
pub fn build_frame(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    protocol: u8,
    ports: (u16, u16),
    ip_id: u16,
    payload: &[u8],
) -> Vec<u8> {
    let l4_len = match protocol {
        IPPROTO_TCP => 20,
        IPPROTO_UDP | IPPROTO_ICMP => 8,
        _ => 0,
    };
    let total_len = (IPV4_MIN_HEADER_LEN + l4_len + payload.len()) as u16;
    let mut f = Vec::with_capacity(ETH_HEADER_LEN + total_len as usize);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // dst mac
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // src mac
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&total_len.to_be_bytes());
    f.extend_from_slice(&ip_id.to_be_bytes());
    f.extend_from_slice(&[0x40, 0]); // DF
    f.push(64);
    f.push(protocol);
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(&src.octets());
    f.extend_from_slice(&dst.octets());
    match protocol {
        IPPROTO_TCP => {
            f.extend_from_slice(&ports.0.to_be_bytes());
            f.extend_from_slice(&ports.1.to_be_bytes());
            f.extend_from_slice(&u32::from(ip_id).to_be_bytes()); // seq
            f.extend_from_slice(&0u32.to_be_bytes()); // ack
            f.extend_from_slice(&[0x50, 0x18]); // data offset 5, PSH|ACK
            f.extend_from_slice(&512u16.to_be_bytes());
            f.extend_from_slice(&[0, 0, 0, 0]);
        }
        IPPROTO_UDP => {
            f.extend_from_slice(&ports.0.to_be_bytes());
            f.extend_from_slice(&ports.1.to_be_bytes());
            f.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
            f.extend_from_slice(&[0, 0]);
        }
        IPPROTO_ICMP => {
            f.extend_from_slice(&[8, 0, 0, 0]);
            f.extend_from_slice(&ip_id.to_be_bytes());
            f.extend_from_slice(&[0, 0]);
        }
        _ => {}
    }
    f.extend_from_slice(payload);
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn http_proto_either_side() {
        let a = build_frame(
            ip("10.0.0.1"),
            ip("10.0.0.2"),
            IPPROTO_TCP,
            (1234, 80),
            1,
            b"x",
        );
        let b = build_frame(
            ip("10.0.0.2"),
            ip("10.0.0.1"),
            IPPROTO_TCP,
            (80, 5678),
            2,
            b"y",
        );
        let c = build_frame(
            ip("10.0.0.2"),
            ip("10.0.0.1"),
            IPPROTO_TCP,
            (443, 5678),
            3,
            b"y",
        );
        assert_eq!(Ipv4Summary::parse(&a).unwrap().proto(), Proto::Http);
        assert_eq!(Ipv4Summary::parse(&b).unwrap().proto(), Proto::Http);
        assert_eq!(Ipv4Summary::parse(&c).unwrap().proto(), Proto::Tcp);
    }

    #[test]
    fn key_display_round_trip() {
        for s in [
            "10.0.0.1-10.0.0.2/http",
            "1.2.3.4:80-5.6.7.8:999/tcp",
            "1.1.1.1-2.2.2.2/ip47",
        ] {
            let k: FlowKey = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("nonsense".parse::<FlowKey>().is_err());
        assert!("1.1.1.1:3-2.2.2.2/tcp".parse::<FlowKey>().is_err());
    }

    #[test]
    fn five_tuple_keeps_endpoint_pairing() {
        let s = Ipv4Summary {
            src: ip("10.0.0.9"),
            dst: ip("10.0.0.1"),
            protocol: IPPROTO_TCP,
            ports: Some((1234, 80)),
        };
        let k = FlowKey::from_summary(&s, FlowVariant::FiveTuple);
        assert_eq!(k.ip_lo, ip("10.0.0.1"));
        assert_eq!(k.ports, Some((80, 1234)));
    }

    #[test]
    fn filter_names() {
        assert_eq!("HTTP".parse::<PacketFilter>().unwrap(), PacketFilter::Http);
        assert!(matches!(
            "dns".parse::<PacketFilter>(),
            Err(FlowcapError::UnknownFilter(_))
        ));
    }

    #[test]
    fn arp_filter_uses_ethertype() {
        let mut arp = vec![0u8; 42];
        arp[12] = 0x08;
        arp[13] = 0x06;
        assert!(PacketFilter::Arp.matches(&arp));
        assert!(!PacketFilter::Http.matches(&arp));
        let icmp = build_frame(ip("1.1.1.1"), ip("2.2.2.2"), IPPROTO_ICMP, (0, 0), 1, &[]);
        assert!(PacketFilter::Icmp.matches(&icmp));
        assert!(!PacketFilter::Arp.matches(&icmp));
    }
}
