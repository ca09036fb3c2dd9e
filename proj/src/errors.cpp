// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/errors.h"

namespace peftport {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::RankError: return "RankError";
    case ErrorKind::IndexOutOfVocab: return "IndexOutOfVocab";
    case ErrorKind::EmptyTensor: return "EmptyTensor";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::IncompatibleConfig: return "IncompatibleConfig";
    case ErrorKind::HookOccupied: return "HookOccupied";
    case ErrorKind::NonFiniteParameter: return "NonFiniteParameter";
    case ErrorKind::IncompatibleHost: return "IncompatibleHost";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ExampleTooLong: return "ExampleTooLong";
    case ErrorKind::LabelNotInVocab: return "LabelNotInVocab";
    case ErrorKind::DegenerateSpec: return "DegenerateSpec";
    case ErrorKind::IncompatibleLabelSpaces: return "IncompatibleLabelSpaces";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::EmptyDimension: return "EmptyDimension";
    case ErrorKind::MissingArtifact: return "MissingArtifact";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

}  // namespace peftport
