#pragma once

#include <string>

#include <Eigen/Dense>

#include "rsn/ica.hpp"
#include "rsn/volume.hpp"

namespace rsn {

struct SubjectComponents {
  std::string subject_id;
  Eigen::MatrixXd timecourses; // T x K (stage 1)
  Eigen::MatrixXd maps;        // K x V (stage 2)
  NiftiHeader grid;
};

// Stage 1: least-squares fit of every timepoint row of Y onto the K group
// maps (maps demeaned over voxels, Y rows demeaned). Returns T x K betas.
Eigen::MatrixXd stage1_spatial_regress(const Eigen::MatrixXd& group_maps,
                                       const Eigen::MatrixXd& subject_data);

// Stage 2: least-squares fit of every voxel column of Y onto the K time
// courses (demeaned over time, optionally variance normalized). K x V betas.
Eigen::MatrixXd stage2_temporal_regress(const Eigen::MatrixXd& timecourses,
                                        const Eigen::MatrixXd& subject_data,
                                        bool variance_normalize = true);

// Stage 1 then stage 2 for one subject volume on the group grid.
SubjectComponents dual_regress(const IcaResult& group, const Volume4D& subject,
                               const BrainMask& mask,
                               bool variance_normalize = true,
                               const std::string& subject_id = "");

// T x V matrix of a subject's in-mask time series.
Eigen::MatrixXd masked_data_matrix(const Volume4D& subject, const BrainMask& mask);

// Stage-2 maps reshaped to K frames on the grid (zeros off-mask).
Volume4D components_to_volume(const SubjectComponents& sc, const BrainMask& mask);

} // namespace rsn
