/** Forward kinematics for rendering: world frames for each link from the
 * served arm description.  Matches the server's joint-table convention
 * (rotate z, translate z, translate x, rotate x per row), so the flange
 * frame agrees with snapshot end-effector poses. */

import { Matrix4, Quaternion, Vector3 } from "three";

import { ArmJson, PoseJson } from "./protocol";

export function poseToMatrix(pose: PoseJson): Matrix4 {
  const [w, x, y, z] = pose.orientation;
  const [px, py, pz] = pose.position;
  return new Matrix4().compose(
    new Vector3(px, py, pz),
    new Quaternion(x, y, z, w), // three is (x, y, z, w); wire is scalar-first
    new Vector3(1, 1, 1),
  );
}

export function rowTransform(
  row: { a: number; alpha: number; d: number; theta_offset: number },
  q: number,
): Matrix4 {
  const th = q + row.theta_offset;
  const ct = Math.cos(th);
  const st = Math.sin(th);
  const ca = Math.cos(row.alpha);
  const sa = Math.sin(row.alpha);
  // prettier-ignore
  return new Matrix4().set(
    ct, -st * ca,  st * sa, row.a * ct,
    st,  ct * ca, -ct * sa, row.a * st,
    0,        sa,       ca, row.d,
    0,         0,        0, 1,
  );
}

/** World transforms of the base frame and frames 1..6 (length 7).
 * basePose overrides the arm file's base (the session can jog it). */
export function linkTransforms(
  arm: ArmJson,
  q: number[],
  basePose?: PoseJson,
): Matrix4[] {
  const frames: Matrix4[] = [poseToMatrix(basePose ?? arm.base_pose)];
  arm.rows.forEach((row, i) => {
    const prev = frames[i];
    if (prev === undefined || q[i] === undefined) {
      throw new Error("need six joint values");
    }
    frames.push(prev.clone().multiply(rowTransform(row, q[i])));
  });
  return frames;
}

export function flangePose(
  arm: ArmJson,
  q: number[],
  basePose?: PoseJson,
): { position: Vector3; quaternion: Quaternion } {
  const frames = linkTransforms(arm, q, basePose);
  const last = frames[6];
  if (last === undefined) throw new Error("unreachable: chain has 7 frames");
  const position = new Vector3();
  const quaternion = new Quaternion();
  last.decompose(position, quaternion, new Vector3());
  return { position, quaternion };
}
