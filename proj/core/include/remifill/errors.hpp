#pragma once

#include <stdexcept>
#include <string>

namespace remifill {

// Base for everything this library throws. Subcommands catch this at the
// top level and turn it into a one-line "error: <kind>: <msg>" on stderr.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

#define REMIFILL_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                       \
    public:                                                           \
        explicit Name(const std::string& msg) : Error(#Name, msg) {}  \
    }

REMIFILL_DEFINE_ERROR(RangeError);
REMIFILL_DEFINE_ERROR(CapacityError);
REMIFILL_DEFINE_ERROR(GrammarError);
REMIFILL_DEFINE_ERROR(ParseError);
REMIFILL_DEFINE_ERROR(CoverageError);
REMIFILL_DEFINE_ERROR(ConfigError);
REMIFILL_DEFINE_ERROR(IoError);
REMIFILL_DEFINE_ERROR(MissingTrackError);
REMIFILL_DEFINE_ERROR(MaskError);
REMIFILL_DEFINE_ERROR(DistributionError);
REMIFILL_DEFINE_ERROR(IndexError);
REMIFILL_DEFINE_ERROR(DivergenceError);
REMIFILL_DEFINE_ERROR(EmptySegmentError);
REMIFILL_DEFINE_ERROR(AlignmentError);

#undef REMIFILL_DEFINE_ERROR

} // namespace remifill
