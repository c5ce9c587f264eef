"""CAHICHA: a reverse-proxy bot gate built on attested hardware interaction.

Unverified visitors complete one WebAuthn credential-creation ceremony
(physical touch / biometric, attested by the authenticator); verified
visitors carry an encrypted cookie and their traffic is transparently
proxied to the unmodified origin server.
"""

__version__ = "0.1.0"
