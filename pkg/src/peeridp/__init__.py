"""peeridp: a decentralized identity provider.

User attributes live encrypted in a simulated peer-to-peer name system.
Access is granted per requesting party through single-tag attribute-based
encryption, revoked by bumping attribute versions, and exposed to standard
clients through an OIDC-style authorization-code flow.
"""

__version__ = "0.1.0"
