#pragma once

#include <stdexcept>
#include <string>

namespace offcbdc {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

// crypto layer
class InvalidPoint : public Error {
public:
    InvalidPoint() : Error("invalid curve point") {}
};

class EmptySecret : public Error {
public:
    EmptySecret() : Error("empty shared secret") {}
};

class AuthFailure : public Error {
public:
    AuthFailure() : Error("message authentication failed") {}
};

class CounterMismatch : public Error {
public:
    CounterMismatch() : Error("sequence counter mismatch (replay or reorder)") {}
};

// pki layer
class BadSignature : public Error {
public:
    BadSignature() : Error("certificate signature invalid") {}
};

class Expired : public Error {
public:
    Expired() : Error("certificate expired") {}
};

class ExpiryInPast : public Error {
public:
    ExpiryInPast() : Error("requested expiry is not in the future") {}
};

class DuplicateEnrollment : public Error {
public:
    DuplicateEnrollment() : Error("public key already enrolled") {}
};

// secure channel
class HandshakeError : public Error {
public:
    explicit HandshakeError(const std::string& what) : Error("handshake: " + what) {}
};

class CertificateRejected : public HandshakeError {
public:
    explicit CertificateRejected(const std::string& why) : HandshakeError("certificate rejected: " + why) {}
};

class BadReceipt : public HandshakeError {
public:
    BadReceipt() : HandshakeError("receipt verification failed") {}
};

class OutOfOrderMessage : public HandshakeError {
public:
    OutOfOrderMessage() : HandshakeError("message out of order") {}
};

class VariantMismatch : public HandshakeError {
public:
    VariantMismatch() : HandshakeError("peers configured for different variants") {}
};

class UnknownSession : public Error {
public:
    UnknownSession() : Error("no such session") {}
};

// attestation
class ConditionUnsatisfied : public Error {
public:
    // line: which assertion of the condition check failed (1..5)
    explicit ConditionUnsatisfied(int line)
        : Error("condition assertion " + std::to_string(line) + " unsatisfied"), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class UnknownBackend : public Error {
public:
    explicit UnknownBackend(const std::string& id) : Error("unknown proof backend: " + id) {}
};

}  // namespace offcbdc
