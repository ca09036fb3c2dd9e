// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace peftport {

enum class ErrorKind {
    ShapeMismatch,
    RankError,
    IndexOutOfVocab,
    EmptyTensor,
    SequenceTooLong,
    IncompatibleConfig,
    HookOccupied,
    NonFiniteParameter,
    IncompatibleHost,
    CorruptFile,
    StepOutOfRange,
    EmptyDataset,
    NonFiniteLoss,
    ExampleTooLong,
    LabelNotInVocab,
    DegenerateSpec,
    IncompatibleLabelSpaces,
    TrainingDiverged,
    MalformedRow,
    UnknownLabel,
    EmptyDimension,
    MissingArtifact,
    EmptyGroup,
    IoError,
    InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace peftport
